"""Exception hierarchy shared across the package.

Two broad families matter for the CLI exit codes: configuration problems
(exit 2) and data problems (exit 3).
"""


class AudiocapError(Exception):
    """Base class for all package errors."""


class ConfigError(AudiocapError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(AudiocapError):
    """Invalid, missing, or inconsistent input data (CLI exit code 3)."""


class SchemaError(DataError):
    """A CSV/JSON file does not match its expected schema."""


class IngestError(DataError):
    """Corpus assembly failed (missing audio, broken references, ...)."""


class StaleCacheError(DataError):
    """A feature cache was built with different pre-processing parameters."""


class VocabularyMismatchError(ConfigError):
    """Ensemble members were trained against different word vocabularies."""


class PrerequisiteError(ConfigError):
    """A pipeline stage was requested before the stages it depends on."""


class TrainingDivergedError(AudiocapError):
    """Training aborted on a non-finite loss; carries a diagnostic dump."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}
