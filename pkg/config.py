# config.py
"""
Process-level settings for the endoscope HQP simulator.

Values come from the environment (optionally a local .env file). Scenario
parameters (chain, gains, markers, ...) live in the scenario JSON instead;
nothing here changes controller semantics.
"""

import os
import logging

from dotenv import load_dotenv

load_dotenv()


def _env_flag(name: str, default: str = "1") -> bool:
    return os.getenv(name, default).strip().lower() not in ("0", "false", "no", "off", "")


# ---------------------------------------------------------------------
# CONFIG
# ---------------------------------------------------------------------
LOG_LEVEL = os.getenv("ENDOSIM_LOG_LEVEL", "INFO").upper()
OUT_DIR = os.getenv("ENDOSIM_OUT_DIR", "./data/runs")
PLOT_DIR = os.getenv("ENDOSIM_PLOT_DIR", "./data/reports/plots")
BENCH_WORKERS = int(os.getenv("ENDOSIM_BENCH_WORKERS", 1))
SHOW_PROGRESS = _env_flag("ENDOSIM_PROGRESS")
RECORD_TIMING = _env_flag("ENDOSIM_RECORD_TIMING")

LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(processName)s] %(message)s"


def setup_logging(level: str = LOG_LEVEL) -> None:
    """Configure root logging once for CLI entry points and worker processes."""
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=LOG_FORMAT,
    )
