from typing import Optional


class ContractViolation(ValueError):
    """precondition or shape contract broken"""


class NumericFault(ArithmeticError):
    """nan or inf produced"""

    def __init__(self, where: str, detail: str = "non-finite values"):
        super().__init__(f"{where}: {detail}")
        self.where = where


class TapeError(RuntimeError):
    """backward on a consumed or missing tape"""


class ConfigError(ValueError):
    """unknown key, bad value or broken config invariant"""


class CheckpointError(Exception):
    """unable to read checkpoint"""


class ChecksumMismatch(CheckpointError):
    """unable to verify crc32"""


class VersionMismatch(CheckpointError):
    """checkpoint written by another format version"""


class DatasetError(Exception):
    """no usable images"""


class TrainingAborted(RuntimeError):
    """loss went non-finite"""

    def __init__(self, step: int, last_good: Optional[str]):
        super().__init__(f"non-finite loss at step {step}, last good: {last_good}")
        self.step = step
        self.last_good = last_good
