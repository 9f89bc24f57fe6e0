"""Rendering of gwbridge experiment CSVs into scaling figures.

Consumes only the stable CSV schema
(experiment,replica,n,k_or_L,stat,value,flag,seed,wall_ms) and manifest.json;
never imports the simulation library. Line fits reproduce the harness's
least-squares slope exactly (same closed form on the same float64 data).
"""

__version__ = "0.1.0"

from .figures import (ReportError, fit_slope, load_records, render_report,
                      REFERENCE_SLOPE, MOGULSKII)
