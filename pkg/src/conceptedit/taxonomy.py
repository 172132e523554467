"""Concept taxonomy and edit cost primitives

A taxonomy is a rooted, connected graph of concepts with non-negative edge
weights. The cost of substituting one concept by another is the length of the
shortest path between them; inserting or deleting a concept costs the length
of its shortest path to the root.

The edge-list document format has one edge per line::

    # comment
    root furniture
    furniture chair
    furniture couch 2

Each line is ``parent child [weight]`` (weight defaults to 1 and may be an
integer, a decimal or a fraction like ``3/2``). The parent of the first edge
is the root of the taxonomy.
"""
import enum
import logging
import os
import threading
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, Optional, Tuple

import networkx as nx

from ._types import ConceptId, Cost
from .exceptions import (
    DisconnectedGraph, DuplicateConcept, ParseError, UnknownConcept)

__all__ = [
    'EditKind',
    'INFINITE_COST',
    'CostPolicy',
    'Taxonomy',
    'normalize_concept',
    'parse_taxonomy',
    'load_taxonomy',
    'concept_distance',
    'insertion_cost',
    'deletion_cost',
]

logger = logging.getLogger(__name__)


class EditKind(enum.Enum):
    """Kind of a concept edit

    The enum values define the lexicographic order of edit kinds.
    """
    DELETE = 'delete'
    INSERT = 'insert'
    SUBSTITUTE = 'substitute'


class _InfiniteCost:
    """Cost of a forbidden edit

    Compares greater than every finite cost and absorbs addition, so that sums
    involving a forbidden edit can never be mistaken for a finite cost.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return 'INFINITE_COST'

    def __str__(self):
        return 'inf'

    def __float__(self):
        return float('inf')

    def __hash__(self):
        return hash(float('inf'))

    def __eq__(self, other):
        return other is self

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True

    def __add__(self, other):
        return self

    __radd__ = __add__

    def __reduce__(self):
        return (_InfiniteCost, ())


#: Sentinel cost of a non-actionable edit
INFINITE_COST = _InfiniteCost()


def normalize_concept(name: str) -> ConceptId:
    """Normalize a concept name: strip surrounding whitespace, lowercase

    >>> normalize_concept('  Traffic Light ')
    'traffic light'
    >>> normalize_concept(normalize_concept('Car')) == normalize_concept('Car')
    True
    """
    normalized = str(name).strip().lower()
    if not normalized:
        raise ValueError("Concept names must not be empty")
    return normalized


def _parse_weight(token: str) -> Cost:
    weight = Fraction(token)
    if weight.denominator == 1:
        return int(weight)
    return weight


class Taxonomy:
    """Rooted, connected, weighted concept graph

    Instances are immutable after construction; all queries are pure and may
    be used concurrently.

    Args:
        root: name of the root concept
        edges: iterable of ``(parent, child, weight)`` tuples

    Raises:
        ParseError: for self-loops or negative weights
        DuplicateConcept: if the same edge is given twice
        DisconnectedGraph: if any concept cannot reach the root
    """

    def __init__(self, root: str, edges: Iterable[Tuple[str, str, Cost]]):
        self._root = normalize_concept(root)
        graph = nx.Graph()
        graph.add_node(self._root)
        for (parent, child, weight) in edges:
            parent = normalize_concept(parent)
            child = normalize_concept(child)
            if parent == child:
                raise ParseError("Self-loop on concept %r" % parent)
            if weight < 0:
                raise ParseError(
                    "Negative weight %s on edge %s-%s" % (weight, parent, child))
            if graph.has_edge(parent, child):
                raise DuplicateConcept(
                    "Edge %s-%s is declared twice" % (parent, child))
            graph.add_edge(parent, child, weight=weight)
        self._graph = graph
        self._nodes = frozenset(graph.nodes)
        depths = nx.single_source_dijkstra_path_length(
            graph, self._root, weight='weight')
        unreachable = sorted(self._nodes.difference(depths))
        if unreachable:
            raise DisconnectedGraph(
                "Concepts not reachable from root %r: %s"
                % (self._root, ", ".join(unreachable)))
        self._depths = dict(depths)
        self._sssp = {self._root: self._depths}
        self._lock = threading.Lock()
        logger.debug(
            "Taxonomy with %d concepts, %d edges, root %r",
            len(self._nodes), graph.number_of_edges(), self._root)

    @property
    def root(self) -> ConceptId:
        return self._root

    @property
    def nodes(self) -> FrozenSet[ConceptId]:
        return self._nodes

    @property
    def graph(self) -> nx.Graph:
        """A copy of the underlying :class:`networkx.Graph`"""
        return self._graph.copy()

    @property
    def edges(self):
        """Sorted list of ``(a, b, weight)`` tuples, with ``a < b``"""
        return sorted(
            (min(a, b), max(a, b), w)
            for (a, b, w) in self._graph.edges(data='weight'))

    def __contains__(self, concept):
        try:
            return normalize_concept(concept) in self._nodes
        except ValueError:
            return False

    def __len__(self):
        return len(self._nodes)

    def __repr__(self):
        return "Taxonomy(root=%r, %d concepts)" % (self._root, len(self))

    def check(self, concept: str) -> ConceptId:
        """Return the normalized `concept`, or raise :exc:`UnknownConcept`"""
        try:
            name = normalize_concept(concept)
        except ValueError:
            raise UnknownConcept("Empty concept name")
        if name not in self._nodes:
            raise UnknownConcept("Concept %r is not in the taxonomy" % name)
        return name

    def depth(self, concept: str) -> Cost:
        """Weighted distance of `concept` from the root"""
        return self._depths[self.check(concept)]

    def depths(self) -> Dict[ConceptId, Cost]:
        """Map of every concept to its distance from the root"""
        return dict(self._depths)

    def distance(self, a: str, b: str) -> Cost:
        """Length of the shortest path between concepts `a` and `b`"""
        a = self.check(a)
        b = self.check(b)
        if a == b:
            return 0
        # the table of the smaller name serves the unordered pair
        source, other = (a, b) if a < b else (b, a)
        table = self._sssp.get(source)
        if table is None:
            table = nx.single_source_dijkstra_path_length(
                self._graph, source, weight='weight')
            with self._lock:
                self._sssp.setdefault(source, table)
        return table[other]


def parse_taxonomy(text: str) -> Taxonomy:
    """Parse an edge-list document into a :class:`Taxonomy`

    Example:

        >>> t = parse_taxonomy('''
        ... root furniture
        ... furniture chair
        ... furniture couch
        ... ''')
        >>> len(t), t.root
        (4, 'root')
        >>> t.depth('chair'), t.distance('chair', 'couch')
        (2, 2)
    """
    edges = []
    seen = set()
    root = None
    for (lineno, line) in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) not in (2, 3):
            raise ParseError(
                "line %d: expected 'parent child [weight]', got %r"
                % (lineno, line))
        if len(tokens) == 3:
            try:
                weight = _parse_weight(tokens[2])
            except (ValueError, ZeroDivisionError):
                raise ParseError(
                    "line %d: invalid weight %r" % (lineno, tokens[2]))
        else:
            weight = 1
        parent, child = (normalize_concept(tok) for tok in tokens[:2])
        if parent == child:
            raise ParseError("line %d: self-loop on %r" % (lineno, parent))
        if weight < 0:
            raise ParseError("line %d: negative weight" % lineno)
        key = frozenset((parent, child))
        if key in seen:
            raise DuplicateConcept(
                "line %d: edge %s-%s is declared twice"
                % (lineno, parent, child))
        seen.add(key)
        if root is None:
            root = parent
        edges.append((parent, child, weight))
    if root is None:
        raise ParseError("Taxonomy document contains no edges")
    return Taxonomy(root, edges)


def load_taxonomy(source) -> Taxonomy:
    """Load a taxonomy from a file path or from an edge-list document string

    A `source` containing a newline, or not naming an existing file, is parsed
    as the document itself.
    """
    if isinstance(source, (str, os.PathLike)) and '\n' not in str(source):
        if os.path.isfile(source):
            with open(source, encoding='utf-8') as in_fh:
                return parse_taxonomy(in_fh.read())
    return parse_taxonomy(str(source))


def concept_distance(t: Taxonomy, a: str, b: str) -> Cost:
    """Cost of substituting `a` by `b`: shortest-path length between them

    Example:
        >>> t = parse_taxonomy("root furniture\\nfurniture chair\\nfurniture couch")
        >>> concept_distance(t, 'chair', 'chair')
        0
        >>> concept_distance(t, 'chair', 'couch')
        2
        >>> concept_distance(t, 'chair', 'root')
        2
    """
    return t.distance(a, b)


def insertion_cost(t: Taxonomy, c: str) -> Cost:
    """Cost of inserting concept `c`: its distance to the root"""
    return t.depth(c)


def deletion_cost(t: Taxonomy, c: str) -> Cost:
    """Cost of deleting concept `c`: its distance to the root"""
    return t.depth(c)


class CostPolicy:
    """Edit costs with a set of non-actionable (forbidden) directed edits

    Args:
        nonactionable: iterable of ``(kind, source, target)`` tuples, where
            `kind` is an :class:`EditKind` (or its value), and `source` /
            `target` are ``None`` for insertions / deletions
        infinite: the cost assigned to non-actionable edits

    Example:

        >>> policy = CostPolicy.from_strings(['delete:car', 'substitute:car->bus'])
        >>> policy.is_actionable(EditKind.DELETE, 'car', None)
        False
        >>> policy.is_actionable(EditKind.INSERT, None, 'car')
        True
    """

    def __init__(self, nonactionable=(), infinite=INFINITE_COST):
        entries = set()
        for (kind, source, target) in nonactionable:
            kind = EditKind(kind)
            source = None if source is None else normalize_concept(source)
            target = None if target is None else normalize_concept(target)
            entries.add((kind, source, target))
        self._nonactionable = frozenset(entries)
        self.infinite = infinite

    @property
    def nonactionable(self):
        return self._nonactionable

    @classmethod
    def from_strings(cls, edits: Iterable[str]) -> 'CostPolicy':
        """Policy from strings ``delete:X``, ``insert:X``,
        ``substitute:X->Y``"""
        entries = []
        for text in edits:
            try:
                kind, rest = text.split(':', 1)
                kind = EditKind(kind.strip().lower())
            except ValueError:
                raise ParseError("Invalid non-actionable edit %r" % text)
            if kind is EditKind.SUBSTITUTE:
                if '->' not in rest:
                    raise ParseError(
                        "Substitution %r must have the form X->Y" % text)
                source, target = rest.split('->', 1)
                entries.append((kind, source, target))
            elif kind is EditKind.DELETE:
                entries.append((kind, rest, None))
            else:
                entries.append((kind, None, rest))
        return cls(entries)

    def to_strings(self):
        """Inverse of :meth:`from_strings` (sorted)"""
        specs = []
        for (kind, source, target) in self._nonactionable:
            if kind is EditKind.SUBSTITUTE:
                specs.append("substitute:%s->%s" % (source, target))
            elif kind is EditKind.DELETE:
                specs.append("delete:%s" % source)
            else:
                specs.append("insert:%s" % target)
        return sorted(specs)

    def check(self, t: Taxonomy):
        """Raise :exc:`UnknownConcept` if the policy names unknown concepts"""
        for (_, source, target) in self._nonactionable:
            for concept in (source, target):
                if concept is not None:
                    t.check(concept)

    def is_actionable(
            self, kind, source: Optional[str], target: Optional[str]) -> bool:
        source = None if source is None else normalize_concept(source)
        target = None if target is None else normalize_concept(target)
        return (EditKind(kind), source, target) not in self._nonactionable

    def edit_cost(self, t: Taxonomy, kind, source=None, target=None):
        """Cost of a directed edit, or :attr:`infinite` if non-actionable"""
        kind = EditKind(kind)
        if not self.is_actionable(kind, source, target):
            return self.infinite
        if kind is EditKind.INSERT:
            return insertion_cost(t, target)
        elif kind is EditKind.DELETE:
            return deletion_cost(t, source)
        else:
            return concept_distance(t, source, target)
