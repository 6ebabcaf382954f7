"""Exception hierarchy shared by every jointvit module."""


class JointViTError(Exception):
    """Base class; ``code`` is the stable tag used in CLI error lines."""

    code = "error"


class DimensionError(JointViTError, ValueError):
    code = "dimension"


class ContractError(JointViTError, ValueError):
    code = "contract"


class NumericInputError(JointViTError, ValueError):
    code = "numeric-input"


class ConfigError(JointViTError, ValueError):
    code = "config"


class DomainError(JointViTError, ValueError):
    code = "domain"


class PolicyError(JointViTError, ValueError):
    code = "policy"


class BalanceError(JointViTError, ValueError):
    code = "balance"


class IngestError(JointViTError, OSError):
    code = "ingest"


class FormatError(JointViTError, ValueError):
    code = "format"


class TrainingDiverged(JointViTError, FloatingPointError):
    code = "diverged"
