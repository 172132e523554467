"""Exceptions raised by the :mod:`conceptedit` package

All exceptions derive from :exc:`ConceptEditError`, which in turn is a
:exc:`ValueError`, so that code catching invalid input in the usual way keeps
working.
"""

__all__ = [
    'ConceptEditError',
    'ParseError',
    'DisconnectedGraph',
    'DuplicateConcept',
    'UnknownConcept',
    'Infeasible',
    'TooLarge',
    'EmptyCandidates',
    'MissingSource',
    'EmptyCorpus',
    'UnparsableResponse',
    'UnknownEdit',
    'SourceMisclassified',
    'SchemaError',
    'SchemaMismatch',
    'EmptyInput',
    'DegenerateCovariance',
    'ZeroBandwidth',
    'LengthMismatch',
    'ZeroVector',
    'ConfigError',
    'UnknownImage',
    'WrongClass',
    'ServiceUnavailable',
    'ClassifierUnavailable',
    'GrounderUnavailable',
    'InpainterUnavailable',
    'SelectorUnavailable',
]


class ConceptEditError(ValueError):
    pass


class ParseError(ConceptEditError):
    """A document (taxonomy, corpus, trace, embeddings) is malformed"""


class DisconnectedGraph(ConceptEditError):
    """A taxonomy node cannot reach the root"""


class DuplicateConcept(ConceptEditError):
    """A concept or edge is declared twice"""


class UnknownConcept(ConceptEditError):
    """A concept is not part of the active taxonomy"""


class Infeasible(ConceptEditError):
    """Every complete assignment requires a non-actionable edit"""


class TooLarge(ConceptEditError):
    pass


class EmptyCandidates(ConceptEditError):
    pass


class MissingSource(ConceptEditError):
    """An edit removes a concept that is not present"""


class EmptyCorpus(ConceptEditError):
    pass


class UnparsableResponse(ConceptEditError):
    """A selector response cannot be parsed"""


class UnknownEdit(ConceptEditError):
    """A selector response names an edit that is not available"""


class SourceMisclassified(ConceptEditError):
    """The source image is not classified as the source label"""


class SchemaError(ConceptEditError):
    """A wire document violates its schema"""


class SchemaMismatch(ConceptEditError):
    """A trace or embedding file does not have the expected layout"""


class EmptyInput(ConceptEditError):
    pass


class DegenerateCovariance(ConceptEditError):
    pass


class ZeroBandwidth(ConceptEditError):
    pass


class LengthMismatch(ConceptEditError):
    pass


class ZeroVector(ConceptEditError):
    pass


class ConfigError(ConceptEditError):
    pass


class UnknownImage(ConceptEditError):
    pass


class WrongClass(ConceptEditError):
    pass


class ServiceUnavailable(ConceptEditError):
    """A service did not answer within its retry budget"""


class ClassifierUnavailable(ServiceUnavailable):
    pass


class GrounderUnavailable(ServiceUnavailable):
    pass


class InpainterUnavailable(ServiceUnavailable):
    pass


class SelectorUnavailable(ServiceUnavailable):
    pass
