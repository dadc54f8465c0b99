"""Transductive short-text classification over word/POS/entity graphs with
hierarchical instance- and cluster-level contrastive learning."""

__version__ = "0.1.0"


class ShortGCLError(Exception):
    """Base class for all pipeline errors."""


class CorpusError(ShortGCLError):
    """Invalid corpus, embedding, or augmentation inputs."""


class GraphError(ShortGCLError):
    """Invalid graph construction inputs."""


class ConfigError(ShortGCLError):
    """Bad configuration or command usage (CLI exit code 2)."""


class ArtifactError(ShortGCLError):
    """Corrupt, stale, or mismatched on-disk artifacts."""
