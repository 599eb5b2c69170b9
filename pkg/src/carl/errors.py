"""Exception hierarchy shared by every stage of the engine."""


class CarlError(Exception):
    """Base class for all engine errors."""


# -- schema / instance loading -------------------------------------------------


class ParseError(CarlError):
    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f"line {line}" + (f", col {col}" if col is not None else "") + ": "
        super().__init__(where + message)


class SchemaError(CarlError):
    pass


class LoadError(CarlError):
    """Raised while materializing an instance from disk."""


class MissingFile(LoadError):
    pass


class ReferentialError(LoadError):
    pass


class DomainError(LoadError):
    pass


class MissingValue(LoadError):
    pass


# -- rule / query language -----------------------------------------------------


class LexError(ParseError):
    pass


class CarlSyntaxError(ParseError):
    pass


class ScopeError(ParseError):
    pass


class ConditionError(ParseError):
    pass


class BindError(CarlError):
    pass


class UnknownName(BindError):
    pass


class ArityError(BindError):
    pass


class RecursiveModelError(BindError, RecursionError):
    """The attribute-level dependency graph of a model has a cycle."""


class TreatmentDomainError(BindError):
    """The treatment attribute of a query is not binary."""


# -- graph ---------------------------------------------------------------------


class CycleError(CarlError):
    pass


class NotConnected(CarlError):
    pass


class UnidentifiableError(CarlError):
    pass


# -- embeddings / estimation ---------------------------------------------------


class PadOverflow(CarlError):
    pass


class EmptyDataset(CarlError):
    pass


class EstimationError(CarlError):
    pass


class DegenerateContrast(EstimationError):
    pass


class RankDeficient(EstimationError):
    pass


class EmptyStrata(EstimationError):
    pass


class JoinEmpty(EstimationError):
    pass
