from typing import List


class RobustHedgeError(Exception):
    pass


class ValidationError(RobustHedgeError):
    def __init__(self, errors: List[str], subject: str = 'input') -> None:
        super().__init__(errors)
        self.errors = errors
        self.subject = subject

    def __str__(self) -> str:
        new_line = '\n'
        return (
            f"The {self.subject} is invalid:{new_line}{new_line}"
            f"{new_line.join(self.errors)}"
        )


class SchemaVersionError(RobustHedgeError):
    def __init__(self, found: str, supported: str) -> None:
        super().__init__(
            f"Document schema-version {found} is newer than the "
            f"supported version {supported}."
        )


class InvalidPathError(RobustHedgeError):
    pass


class TreeFamilyError(RobustHedgeError):
    pass


class ConditioningError(TreeFamilyError):
    pass


class PastingError(TreeFamilyError):
    pass


class UncertaintySpecError(RobustHedgeError):
    pass


class PolicyError(RobustHedgeError):
    pass


class DeflatorError(RobustHedgeError):
    pass


class LevelSequenceError(RobustHedgeError):
    pass


class ClaimError(RobustHedgeError):
    pass


class MatrixError(RobustHedgeError):
    pass


class OversizeTreeError(RobustHedgeError):
    def __init__(self, periods: int, limit: int) -> None:
        super().__init__(
            f"Brute-force enumeration supports at most {limit} periods, "
            f"the tree has {periods}."
        )


class InfeasibleNumericsError(RobustHedgeError):
    pass
