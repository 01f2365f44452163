"""Exception hierarchy shared by all spoofbench modules."""


class SpoofBenchError(Exception):
    """Base class for every error raised by this package."""


# -- data loading ------------------------------------------------------------
class MissingFile(SpoofBenchError, FileNotFoundError):
    pass


class UndecodableAudio(SpoofBenchError, ValueError):
    pass


class ZeroLengthAudio(SpoofBenchError, ValueError):
    pass


class MalformedLine(SpoofBenchError, ValueError):
    def __init__(self, line_no: int, line: str, reason: str = ""):
        self.line_no = line_no
        self.line = line
        msg = f"malformed protocol line {line_no}: {line!r}"
        super().__init__(f"{msg} ({reason})" if reason else msg)


class UnknownKey(SpoofBenchError, ValueError):
    pass


class DuplicateUttId(SpoofBenchError, ValueError):
    pass


class MissingColumn(SpoofBenchError, ValueError):
    pass


class UnknownLabel(SpoofBenchError, ValueError):
    def __init__(self, value: str):
        self.value = value
        super().__init__(f"unknown label {value!r}")


class MissingDuration(SpoofBenchError, KeyError):
    def __init__(self, utt_id: str):
        self.utt_id = utt_id
        super().__init__(f"no duration for utterance {utt_id!r}")


class UnwritableDirectory(SpoofBenchError, OSError):
    pass


class EmptyManifest(SpoofBenchError, ValueError):
    pass


class DataMissing(SpoofBenchError):
    """A configured dataset file or directory does not exist."""


# -- features ----------------------------------------------------------------
class ClipTooShort(SpoofBenchError, ValueError):
    pass


class InvalidConfig(SpoofBenchError, ValueError):
    pass


# -- models ------------------------------------------------------------------
class UnknownModelId(SpoofBenchError, KeyError):
    pass


class IncompatibleConfig(SpoofBenchError, ValueError):
    pass


class ShapeMismatch(SpoofBenchError, ValueError):
    pass


class InputTooShort(SpoofBenchError, ValueError):
    def __init__(self, min_frames: int, got: int):
        self.min_frames = min_frames
        self.got = got
        super().__init__(f"input has {got} frames, model needs at least {min_frames}")


# -- training ----------------------------------------------------------------
class NonFiniteLoss(SpoofBenchError, FloatingPointError):
    pass


class MissingAudio(SpoofBenchError, FileNotFoundError):
    pass


class SchemaMismatch(SpoofBenchError, ValueError):
    pass


# -- metrics -----------------------------------------------------------------
class SingleClassInput(SpoofBenchError, ValueError):
    pass


class MissingAsvClass(SpoofBenchError, ValueError):
    pass


class DegenerateCosts(SpoofBenchError, ValueError):
    pass


class EmptyGroup(SpoofBenchError, ValueError):
    pass


class NoMatchedPairs(SpoofBenchError, ValueError):
    pass


# -- harness -----------------------------------------------------------------
class EmptyGrid(SpoofBenchError, ValueError):
    pass


class EmptyStore(SpoofBenchError, ValueError):
    pass
