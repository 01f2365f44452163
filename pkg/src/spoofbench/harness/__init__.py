"""Experiment grid runner, results store and report rendering."""
from .config import DatasetSpec, ExperimentSpec, RunConfig, canonical_hash, load_config, parse_config
from .grid import GridCell, GridSummary, expand_grid, run_grid
from .report import report
from .store import ResultsStore, RunKey, RunRecord

__all__ = [
    "DatasetSpec", "ExperimentSpec", "RunConfig", "canonical_hash", "load_config", "parse_config",
    "GridCell", "GridSummary", "expand_grid", "run_grid", "report",
    "ResultsStore", "RunKey", "RunRecord",
]
