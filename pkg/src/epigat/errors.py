"""Exception hierarchy shared by every stage of the pipeline."""


class EpiGatError(Exception):
    """Base class for all pipeline errors."""


class DataError(EpiGatError):
    """Problems with input recordings or manifests."""


class MissingChannel(DataError):
    def __init__(self, name):
        super().__init__(f"missing canonical channel {name!r}")
        self.name = name


class MalformedRow(DataError):
    def __init__(self, line, detail=""):
        msg = f"malformed row at line {line}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.line = line


class EmptyRecording(DataError):
    pass


class DuplicateSubject(DataError):
    def __init__(self, subject_id):
        super().__init__(f"duplicate subject id {subject_id!r}")
        self.subject_id = subject_id


class UnknownLabel(DataError):
    def __init__(self, value):
        super().__init__(f"unknown label {value!r}; expected 'control' or 'epilepsy'")
        self.value = value


class InvalidSpec(EpiGatError, ValueError):
    pass


class InvalidBand(EpiGatError, ValueError):
    pass


class TooShort(EpiGatError, ValueError):
    pass


class NoConvergence(EpiGatError, RuntimeError):
    def __init__(self, iterations):
        super().__init__(f"FastICA did not converge within {iterations} iterations")
        self.iterations = iterations


class EmptyTrainSet(EpiGatError, ValueError):
    pass


class LengthMismatch(EpiGatError, ValueError):
    pass


class ShapeMismatch(EpiGatError, ValueError):
    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class InvalidSegment(EpiGatError, ValueError):
    pass


class NotScalarLoss(EpiGatError, ValueError):
    pass


class EmptySplit(EpiGatError, ValueError):
    pass


class ClassMissing(EpiGatError, ValueError):
    pass


class SingleClass(EpiGatError, ValueError):
    pass


class DegenerateVariance(EpiGatError, ArithmeticError):
    pass


class EmptySampleSet(EpiGatError, ValueError):
    pass


class InvalidTopK(EpiGatError, ValueError):
    pass


class DimensionMismatch(EpiGatError, ValueError):
    pass


class ConfigError(EpiGatError, ValueError):
    pass
