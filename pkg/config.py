"""
Configuration settings for MeshLoc.
"""

import os
from dataclasses import dataclass


@dataclass
class MeshLocConfig:
    """Application-level settings; simulation parameters live in scenario files."""

    # Diagnostics (off, info, trace)
    log_level: str = "off"

    # Output settings
    output_dir: str = "results"
    metrics_format: str = "csv"  # 'csv' or 'json'

    # Worker processes for multi-seed runs
    workers: int = 1

    # Scenario used by run.sh when none is given
    default_scenario: str = "scenarios/five_node.json"

    @classmethod
    def for_development(cls):
        """Get configuration for development/testing."""
        return cls(log_level="info", output_dir="results/dev")

    @classmethod
    def for_production(cls):
        """Get configuration for sweeps."""
        return cls(log_level="off", workers=os.cpu_count() or 1)

    @classmethod
    def from_env(cls):
        """Defaults overridden by MESHLOC_LOG, MESHLOC_OUT and MESHLOC_FORMAT."""
        config = cls()
        return cls(
            log_level=os.environ.get("MESHLOC_LOG", config.log_level),
            output_dir=os.environ.get("MESHLOC_OUT", config.output_dir),
            metrics_format=os.environ.get("MESHLOC_FORMAT", config.metrics_format),
            workers=config.workers,
            default_scenario=config.default_scenario,
        )
