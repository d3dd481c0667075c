"""Exception types shared across the emulation pipeline."""


class EmulationError(Exception):
    """Base class for all pipeline errors."""


# --- run archive ---------------------------------------------------------

class MissingColumn(EmulationError):
    def __init__(self, name):
        super().__init__(f"required column missing from file: {name!r}")
        self.name = name


class NonContiguousDates(EmulationError):
    """Raised on the first date that breaks daily contiguity."""

    def __init__(self, first_gap_date):
        super().__init__(f"non-contiguous daily calendar at {first_gap_date}")
        self.first_gap_date = first_gap_date


class NonFiniteValue(EmulationError):
    def __init__(self, row, column):
        super().__init__(f"non-finite or missing value at data row {row}, column {column!r}")
        self.row = row
        self.column = column


class NegativeOutput(EmulationError):
    def __init__(self, row, column):
        super().__init__(f"negative output value at data row {row}, column {column!r}")
        self.row = row
        self.column = column


class EmptySlice(EmulationError):
    def __init__(self, which):
        super().__init__(f"split range {which!r} selects zero days")
        self.which = which


# --- features ------------------------------------------------------------

class AlphaOutOfRange(EmulationError):
    def __init__(self, alpha):
        super().__init__(f"smoothing constant must lie strictly in (0, 1), got {alpha}")
        self.alpha = alpha


class MissingForcing(EmulationError):
    def __init__(self, name):
        super().__init__(f"run is missing forcing series {name!r} required by the feature spec")
        self.name = name


# --- scaling -------------------------------------------------------------

class UnknownVariable(EmulationError):
    def __init__(self, var):
        super().__init__(f"variable {var!r} was not fitted by this scaler")
        self.var = var


# --- series comparison ----------------------------------------------------

class LengthMismatch(EmulationError):
    def __init__(self, len_a, len_b):
        super().__init__(f"series lengths differ: {len_a} vs {len_b}")
        self.len_a = len_a
        self.len_b = len_b


class TooShort(EmulationError):
    def __init__(self, length):
        super().__init__(f"need at least 2 points, got {length}")
        self.length = length


class DateMismatch(EmulationError):
    def __init__(self, detail=""):
        super().__init__(f"runs do not share date coverage on the comparison window{': ' + detail if detail else ''}")


# --- network core ----------------------------------------------------------

class DimensionMismatch(EmulationError):
    def __init__(self, detail):
        super().__init__(f"dimension mismatch: {detail}")


class MissingCache(EmulationError):
    def __init__(self):
        super().__init__("backward pass requires the cache produced by a forward pass")


# --- training --------------------------------------------------------------

class NoTrainingData(EmulationError):
    def __init__(self, which="train"):
        super().__init__(f"no samples available for the {which} set")
        self.which = which


class DivergedLoss(EmulationError):
    def __init__(self, epoch):
        super().__init__(f"loss became non-finite during epoch {epoch}")
        self.epoch = epoch


class RunTooShort(EmulationError):
    def __init__(self, run_id):
        super().__init__(f"run {run_id!r} is shorter than the lag window")
        self.run_id = run_id


class EmptyGrid(EmulationError):
    def __init__(self):
        super().__init__("hyper-parameter grid enumerates zero cells")


# --- evaluation -------------------------------------------------------------

class EmptyData(EmulationError):
    def __init__(self, detail="no data points"):
        super().__init__(detail)


# --- artifacts ---------------------------------------------------------------

class BundleVersionMismatch(EmulationError):
    def __init__(self, detail):
        super().__init__(f"model bundle rejected: {detail}")


class NoRuns(EmulationError):
    def __init__(self, where):
        super().__init__(f"no run files found in {where}")


class ConfigError(EmulationError):
    pass
