"""Exception and warning types raised across the package."""


class DRGLMError(Exception):
    """Base class for every error this package raises on purpose."""

    #: short machine-readable tag used in error JSON
    kind = "error"

    def details(self):
        return {}


class DimensionError(DRGLMError, ValueError):
    kind = "dimension-mismatch"


class DomainError(DRGLMError, ValueError):
    """Response values outside the family's support, or a bad ``Family``."""

    kind = "domain"


class NonFiniteError(DRGLMError, FloatingPointError):
    """A non-finite intermediate was produced while evaluating a row."""

    kind = "non-finite"

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row

    def details(self):
        return {"row": self.row}


class SingularDesign(DRGLMError, ValueError):
    """The Gram matrix is singular or indefinite.

    ``column`` is the 0-based index of the first column found to be
    linearly dependent on the ones before it.
    """

    kind = "singular-design"

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column

    def details(self):
        return {"column": self.column}


class SingularInformation(DRGLMError, ValueError):
    kind = "singular-information"

    def __init__(self, message, subset=None, column=None):
        super().__init__(message)
        self.subset = subset
        self.column = column

    def details(self):
        return {"subset": self.subset, "column": self.column}


class SeparationError(DRGLMError, RuntimeError):
    """Coefficients diverged during Newton iterations (likely separation)."""

    kind = "separation"

    def __init__(self, message, subset=None):
        super().__init__(message)
        self.subset = subset

    def details(self):
        return {"subset": self.subset}


class CombineRejected(DRGLMError, ValueError):
    """Recombination refused because some subset fits did not converge."""

    kind = "combine-rejected"

    def __init__(self, message, subsets=()):
        super().__init__(message)
        self.subsets = list(subsets)

    def details(self):
        return {"subsets": self.subsets}


class PartitionError(DRGLMError, ValueError):
    kind = "partition"


class DataError(DRGLMError, ValueError):
    """Malformed input data: bad cell, missing value, row-count drift."""

    kind = "data"

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column

    def details(self):
        return {"row": self.row, "column": self.column}


class SpecError(DRGLMError, ValueError):
    """Invalid model spec or synthetic-data config; ``path`` names the field."""

    kind = "validation"

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path

    def details(self):
        return {"path": self.path}


class LabelMismatch(DRGLMError, ValueError):
    kind = "label-mismatch"

    def __init__(self, message, difference=()):
        super().__init__(message)
        self.difference = sorted(difference)

    def details(self):
        return {"symmetric_difference": self.difference}


class NonConvergedWarning(RuntimeWarning):
    """Newton iterations hit ``max_iterations``; the fit is returned unconverged."""
