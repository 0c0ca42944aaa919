"""Exception types shared across the package."""


class MumoError(Exception):
    """Base class for all package errors."""


class ParseError(MumoError):
    """SMILES grammar fault; carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EmptyInput(ParseError):
    pass


class UnclosedBracket(ParseError):
    pass


class UnclosedBranch(ParseError):
    pass


class UnmatchedRingClosure(ParseError):
    pass


class UnknownElement(ParseError):
    pass


class UnterminatedBracket(ParseError):
    """Tokenizer-level fault: '[' with no matching ']'."""


class EmptyCorpus(MumoError):
    pass


class SequenceTooLong(MumoError):
    pass


class UnknownId(MumoError):
    pass


class DegenerateGeometry(MumoError):
    pass


class NoConformer(MumoError):
    pass


class DimensionMismatch(MumoError):
    pass


class LengthMismatch(MumoError):
    pass


class MaskMismatch(MumoError):
    pass


class InvalidEdgeIndex(MumoError):
    pass


class ShapeMismatch(MumoError):
    pass


class InvalidAxis(MumoError):
    pass


class NonScalarLoss(MumoError):
    pass


class StaleTape(MumoError):
    pass


class NotAFusionLayer(MumoError):
    pass


class NoMaskedPositions(MumoError):
    pass


class SingleClass(MumoError):
    pass


class ZeroVariance(MumoError):
    pass


class Empty(MumoError):
    pass


class WidthMismatch(MumoError):
    pass


class InvalidConfig(MumoError):
    pass


class DataError(MumoError):
    pass


class CheckpointCorrupt(MumoError):
    pass
