"""Command-line runner, settings, run logs and cluster export."""
from .config import ConfigError, Settings, build_backends, load_settings
from .export import export_clusters
from .runlog import CorruptLog, EmptyRun, RunLog, read_log, resume_point, trajectory_lines
