"""Type hints"""
from fractions import Fraction
from typing import Union, Tuple

#: An edit cost. Costs are exact: plain integers for the default unit edge
#: weights, :class:`~fractions.Fraction` for rational weights.
Cost = Union[int, Fraction]
ConceptId = str
Label = str
#: Content-addressed image reference, e.g. ``"sha256:9f86d0..."``
ImageRef = str
#: Canonical key of an importance-table entry (two concepts, or a concept and
#: the empty partner)
PairKey = Tuple[str, str]
