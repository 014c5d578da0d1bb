"""Exception hierarchy shared by all attrinet modules.

Data-shaped problems (bad manifests, missing samples, empty masks) raise
``DataError`` subclasses; numerical blow-ups during training raise
``NumericalError`` subclasses.  The CLI maps these onto exit codes 3 and 4.
"""

from __future__ import annotations


class AttriNetError(Exception):
    """Base class for all errors raised by this package."""


class DataError(AttriNetError):
    """Invalid or insufficient input data."""


class MissingColumn(DataError):
    def __init__(self, column: str, path: str = ""):
        super().__init__(f"manifest {path!r} is missing required column {column!r}")
        self.column = column


class MalformedBox(DataError):
    def __init__(self, row_id: str, detail: str):
        super().__init__(f"row {row_id!r}: malformed box: {detail}")
        self.row_id = row_id


class MalformedLabel(DataError):
    def __init__(self, row_id: str, detail: str):
        super().__init__(f"row {row_id!r}: malformed label: {detail}")
        self.row_id = row_id


class UnknownClass(DataError):
    def __init__(self, row_id: str, class_ref: object):
        super().__init__(f"row {row_id!r}: references unknown class {class_ref!r}")
        self.row_id = row_id


class InsufficientSamples(DataError):
    def __init__(self, class_index: int, needed: int, available: int, positive: bool):
        kind = "positive" if positive else "negative"
        super().__init__(
            f"class {class_index}: need {needed} {kind} samples, only {available} available"
        )
        self.class_index = class_index
        self.needed = needed
        self.available = available


class EmptyPositiveSet(DataError):
    def __init__(self, class_index: int):
        super().__init__(f"class {class_index} has no positive samples to contaminate")
        self.class_index = class_index


class NoAnnotations(DataError):
    def __init__(self, class_index: int):
        super().__init__(f"no pixel annotations available for class {class_index}")
        self.class_index = class_index


class EmptyMask(DataError):
    def __init__(self, detail: str = "mask has no active pixels"):
        super().__init__(detail)


class ConflictingRegions(DataError):
    def __init__(self, detail: str):
        super().__init__(detail)


class DegenerateClass(DataError):
    def __init__(self, class_index: int, detail: str = "only one label value present"):
        super().__init__(f"class {class_index}: {detail}")
        self.class_index = class_index


class EmptyBatch(DataError):
    def __init__(self, detail: str = "empty score batch"):
        super().__init__(detail)


class NoCorrectPositives(DataError):
    def __init__(self, class_index: int):
        super().__init__(f"class {class_index}: no correctly predicted positive samples")
        self.class_index = class_index


class EmptyAnnotation(DataError):
    def __init__(self, detail: str = "annotation region is empty"):
        super().__init__(detail)


class ZeroAttribution(DataError):
    def __init__(self, detail: str = "attribution map is identically zero"):
        super().__init__(detail)


class EmptyTagRegion(DataError):
    def __init__(self, detail: str = "no tag boxes supplied"):
        super().__init__(detail)


class ShapeMismatch(AttriNetError, ValueError):
    def __init__(self, detail: str):
        super().__init__(detail)


class IndexOutOfRange(AttriNetError, IndexError):
    def __init__(self, detail: str):
        super().__init__(detail)


class NumericalError(AttriNetError):
    """Non-finite values encountered during optimization."""


class NaNLoss(NumericalError):
    def __init__(self, step: int, term: str, value: float):
        super().__init__(f"non-finite loss at generator step {step}: {term}={value!r}")
        self.step = step
        self.term = term
        self.value = value
