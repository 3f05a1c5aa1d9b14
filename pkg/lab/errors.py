# lab/errors.py
"""
Lab Errors

Exception hierarchy shared by every module. Each error exposes a stable
``code`` (its class name) that the CLI reports in machine-readable form.
"""


class LabError(Exception):
    """Base class for all laboratory errors"""

    @property
    def code(self) -> str:
        return type(self).__name__


class NonFiniteState(LabError):
    """ODE state left the finite reals (diverged or step too large)"""


class NonFiniteLoss(LabError):
    """Training loss became NaN or infinite"""


class NonFiniteScore(LabError):
    """A pruning criterion produced a non-finite score"""


class ShapeMismatch(LabError):
    """Arrays that must agree in shape do not"""


class ConfigError(LabError):
    """Invalid or inconsistent configuration"""


class EmptyLayer(LabError):
    """A layer would lose all of its weights"""


class MissingCheckpoint(LabError):
    """A rewinding policy needs a checkpoint that was never stored"""


class LedgerMismatch(LabError):
    """Two sign ledgers do not cover the same levels and parameters"""


class IdxFormatError(LabError):
    """Base class for IDX parsing failures"""


class BadMagic(IdxFormatError):
    """IDX file starts with an unexpected magic number"""


class TruncatedFile(IdxFormatError):
    """IDX payload is shorter than its header announces"""


class CountMismatch(IdxFormatError):
    """Image and label files disagree on the number of items"""
