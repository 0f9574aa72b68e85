from .config import DecoderSpec, ExperimentConfig, FixtureSpec, load_config
from .fixtures import generate_fixtures, read_fixture, write_fixtures
from .runner import aggregate, run_grid, run_trajectory
from .reporting import report

__all__ = [
    "DecoderSpec",
    "ExperimentConfig",
    "FixtureSpec",
    "load_config",
    "generate_fixtures",
    "read_fixture",
    "write_fixtures",
    "aggregate",
    "run_grid",
    "run_trajectory",
    "report",
]
