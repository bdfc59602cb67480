"""Configuration, scenario runner, aggregation and CLI."""

from .config import ExperimentConfig
from .runner import AggregateSummary, RunRecord, aggregate, run_scenario

__all__ = ["AggregateSummary", "ExperimentConfig", "RunRecord", "aggregate", "run_scenario"]
