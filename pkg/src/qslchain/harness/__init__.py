"""Command-line harness: configuration, runs, persistence."""
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .runs import (MissingInputError, ResultBundle, cmd_filter, cmd_optimize, cmd_report,
                   cmd_scan, cmd_simulate)

__all__ = ["ConfigError", "RunConfig", "config_from_dict", "load_config", "MissingInputError",
           "ResultBundle", "cmd_filter", "cmd_optimize", "cmd_report", "cmd_scan",
           "cmd_simulate"]
