"""Minimal edit sets between concept annotations

The minimal edit set between a source and a target annotation is found as a
minimum-cost assignment: source concepts (plus one insertion dummy per target
concept) are assigned to target concepts (plus one deletion dummy per source
concept). Pairing source with target is a substitution, pairing a source
concept with its own deletion dummy is a deletion, pairing a target concept
with its own insertion dummy is an insertion, and dummy-dummy pairs are free.
"""
import itertools
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import (
    NegativeCycleError, connected_components, csgraph_from_dense,
    shortest_path)

from ._types import ConceptId, Cost, Label
from .exceptions import (
    EmptyCandidates, Infeasible, MissingSource, ParseError, TooLarge)
from .prec import MAX_EXACT_FLOAT_INT
from .taxonomy import (
    INFINITE_COST, CostPolicy, EditKind, Taxonomy, normalize_concept)

__all__ = [
    'ConceptAnnotation',
    'Edit',
    'EditSet',
    'MatchingProblem',
    'build_matching_problem',
    'min_edit_cost',
    'min_edit_set',
    'brute_force_edit_set',
    'closest_target',
    'apply_edits',
    'load_corpus',
    'dump_corpus',
    'check_annotation',
]

logger = logging.getLogger(__name__)

#: Largest annotation size accepted by :func:`brute_force_edit_set`
BRUTE_FORCE_LIMIT = 6


def _cost_to_json(cost):
    if isinstance(cost, Fraction):
        return str(cost)
    return cost


def _cost_from_json(value):
    if isinstance(value, str):
        cost = Fraction(value)
        return int(cost) if cost.denominator == 1 else cost
    if isinstance(value, float):
        cost = Fraction(value).limit_denominator()
        return int(cost) if cost.denominator == 1 else cost
    return value


@dataclass(frozen=True)
class ConceptAnnotation:
    """An image's identity, class label, and multiset of concepts

    The concepts are stored as a sorted tuple; repeated concepts are allowed.

    Example:
        >>> a = ConceptAnnotation('img1', 'Stop', ['Car', 'pole', 'car'])
        >>> a.concepts
        ('car', 'car', 'pole')
        >>> a.multiset['car']
        2
    """
    image_id: str
    label: Label
    concepts: Tuple[ConceptId, ...] = ()
    image: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, 'concepts',
            tuple(sorted(normalize_concept(c) for c in self.concepts)))

    @property
    def multiset(self) -> Counter:
        return Counter(self.concepts)

    def with_concepts(self, concepts) -> 'ConceptAnnotation':
        return ConceptAnnotation(
            self.image_id, self.label, tuple(concepts), image=self.image)

    def to_dict(self):
        data = {
            'image_id': self.image_id,
            'label': self.label,
            'concepts': list(self.concepts),
        }
        if self.image is not None:
            data['image'] = self.image
        return data

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                str(data['image_id']), str(data['label']),
                tuple(data['concepts']), image=data.get('image'))
        except (KeyError, TypeError) as exc_info:
            raise ParseError("Invalid annotation record: %s" % exc_info)


@dataclass(frozen=True)
class Edit:
    """A single insertion, deletion or substitution of a concept

    The optional `anchor` names the object that grounds the edit in the image
    (the object an insertion appears in front of, or the backdrop revealed by
    a deletion). It does not take part in comparisons.
    """
    kind: EditKind
    source: Optional[ConceptId] = None
    target: Optional[ConceptId] = None
    cost: Cost = 0
    anchor: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        kind = EditKind(self.kind)
        object.__setattr__(self, 'kind', kind)
        if self.source is not None:
            object.__setattr__(self, 'source', normalize_concept(self.source))
        if self.target is not None:
            object.__setattr__(self, 'target', normalize_concept(self.target))
        if kind is EditKind.INSERT:
            if self.source is not None or self.target is None:
                raise ValueError("An insertion has a target and no source")
        elif kind is EditKind.DELETE:
            if self.target is not None or self.source is None:
                raise ValueError("A deletion has a source and no target")
        else:
            if self.source is None or self.target is None:
                raise ValueError("A substitution needs source and target")
            if self.source == self.target:
                raise ValueError(
                    "Substitution of %r by itself" % self.source)
        if self.cost < 0:
            raise ValueError("Edit costs must be non-negative")

    @classmethod
    def insert(cls, target, cost=0, anchor=None):
        return cls(EditKind.INSERT, None, target, cost, anchor)

    @classmethod
    def delete(cls, source, cost=0, anchor=None):
        return cls(EditKind.DELETE, source, None, cost, anchor)

    @classmethod
    def substitute(cls, source, target, cost=0):
        return cls(EditKind.SUBSTITUTE, source, target, cost)

    @property
    def sort_key(self):
        """Lexicographic key ``(kind, source, target)``"""
        return (self.kind.value, self.source or '', self.target or '')

    def __lt__(self, other):
        return self.sort_key < other.sort_key

    def with_anchor(self, anchor) -> 'Edit':
        return Edit(self.kind, self.source, self.target, self.cost, anchor)

    def describe(self) -> str:
        """Short human-readable form

        >>> Edit.substitute('couch', 'bed').describe()
        'substitute couch -> bed'
        """
        if self.kind is EditKind.INSERT:
            return "insert %s" % self.target
        elif self.kind is EditKind.DELETE:
            return "delete %s" % self.source
        return "substitute %s -> %s" % (self.source, self.target)

    def to_dict(self):
        data = {
            'kind': self.kind.value,
            'source': self.source,
            'target': self.target,
            'cost': _cost_to_json(self.cost),
        }
        if self.anchor is not None:
            data['anchor'] = self.anchor
        return data

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                EditKind(data['kind']), data.get('source'), data.get('target'),
                _cost_from_json(data.get('cost', 0)), data.get('anchor'))
        except (KeyError, TypeError) as exc_info:
            raise ParseError("Invalid edit record: %s" % exc_info)


@dataclass(frozen=True)
class EditSet:
    """An ordered plan of edits transforming one annotation into another"""
    edits: Tuple[Edit, ...]
    total_cost: Cost
    source_image: str
    target_image: str

    def __len__(self):
        return len(self.edits)

    def __iter__(self):
        return iter(self.edits)

    def to_dict(self):
        return {
            'source_image': self.source_image,
            'target_image': self.target_image,
            'total_cost': _cost_to_json(self.total_cost),
            'edits': [edit.to_dict() for edit in self.edits],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            edits = tuple(Edit.from_dict(e) for e in data['edits'])
            return cls(
                edits, _cost_from_json(data['total_cost']),
                data['source_image'], data['target_image'])
        except (KeyError, TypeError) as exc_info:
            raise ParseError("Invalid edit set record: %s" % exc_info)


@dataclass
class MatchingProblem:
    """Padded assignment problem between source and target concepts

    `weights` is an ``(m + n) × (n + m)`` object array of exact costs (or
    :data:`~conceptedit.taxonomy.INFINITE_COST`). Rows ``0..m-1`` are the
    source concepts, rows ``m..m+n-1`` the insertion dummies; columns
    ``0..n-1`` are the target concepts, columns ``n..n+m-1`` the deletion
    dummies.
    """
    left: Tuple[ConceptId, ...]
    right: Tuple[ConceptId, ...]
    weights: np.ndarray

    @property
    def dummy_left(self):
        """Insertion dummies, one per target concept"""
        return tuple('+' + c for c in self.right)

    @property
    def dummy_right(self):
        """Deletion dummies, one per source concept"""
        return tuple('-' + c for c in self.left)

    @property
    def shape(self):
        return self.weights.shape

    def edit(self, row: int, col: int) -> Optional[Edit]:
        """Edit implied by assigning `row` to `col` (None for no edit)"""
        m, n = len(self.left), len(self.right)
        cost = self.weights[row, col]
        if row < m and col < n:
            if self.left[row] == self.right[col]:
                return None
            return Edit.substitute(self.left[row], self.right[col], cost)
        elif row < m:
            return Edit.delete(self.left[row], cost)
        elif col < n:
            return Edit.insert(self.right[col], cost)
        return None


def check_annotation(t: Taxonomy, annotation: ConceptAnnotation):
    """Raise :exc:`UnknownConcept` if `annotation` has unknown concepts"""
    for concept in set(annotation.concepts):
        t.check(concept)


def _residuals(src: ConceptAnnotation, tgt: ConceptAnnotation):
    """Multiset differences ``src - tgt`` and ``tgt - src`` (sorted)"""
    a, b = src.multiset, tgt.multiset
    left = tuple(sorted((a - b).elements()))
    right = tuple(sorted((b - a).elements()))
    return left, right


def build_matching_problem(
        t: Taxonomy, policy: CostPolicy, src: ConceptAnnotation,
        tgt: ConceptAnnotation) -> MatchingProblem:
    """Construct the padded assignment problem between `src` and `tgt`

    Concepts shared by both annotations (their multiset intersection) are
    left untouched and do not appear in the problem.
    """
    check_annotation(t, src)
    check_annotation(t, tgt)
    left, right = _residuals(src, tgt)
    m, n = len(left), len(right)
    weights = np.full((m + n, n + m), INFINITE_COST, dtype=object)
    for (i, s) in enumerate(left):
        for (j, s_star) in enumerate(right):
            weights[i, j] = policy.edit_cost(t, EditKind.SUBSTITUTE, s, s_star)
        weights[i, n + i] = policy.edit_cost(t, EditKind.DELETE, s, None)
    for (j, s_star) in enumerate(right):
        weights[m + j, j] = policy.edit_cost(t, EditKind.INSERT, None, s_star)
        for i in range(m):
            weights[m + j, n + i] = 0
    return MatchingProblem(left, right, weights)


def _cost_matrix(problem: MatchingProblem):
    """Float matrix of the costs and the tolerance for comparing sums

    Costs are scaled to integers when all sums along assignments and
    alternating paths stay exact in float64; otherwise the plain costs are
    compared with a small relative tolerance.
    """
    finite = [
        Fraction(w) for w in problem.weights.flat if w is not INFINITE_COST]
    lcm = 1
    for w in finite:
        lcm = lcm * w.denominator // math.gcd(lcm, w.denominator)
    largest = max([abs(w) for w in finite] + [Fraction(1)])
    size = problem.shape[0]
    exact = largest * lcm * 4 * (size + 1) < MAX_EXACT_FLOAT_INT
    if not exact:
        logger.debug("Cost range too large for exact tie-breaking")
    scale = lcm if exact else 1
    matrix = np.full(problem.shape, np.inf)
    for ((row, col), w) in np.ndenumerate(problem.weights):
        if w is not INFINITE_COST:
            matrix[row, col] = float(Fraction(w) * scale)
    tol = 0.0 if exact else 1e-9 * float(largest)
    return matrix, tol


def _constrain(matrix, fixed):
    """Copy of `matrix` that only admits assignments containing `fixed`"""
    constrained = matrix.copy()
    for (row, col) in fixed:
        keep = constrained[row, col]
        constrained[row, :] = np.inf
        constrained[:, col] = np.inf
        constrained[row, col] = keep
    return constrained


def _optimal_cells(matrix, pairs, tol):
    """Cells of `matrix` that lie on at least one optimal assignment

    `pairs` is one optimal assignment. Any other cell qualifies if its reduced
    cost vanishes and it closes a zero-cost alternating cycle, that is, both
    of its ends fall in one strongly connected component of the tight
    residual graph.
    """
    size = len(matrix)
    matched = set(pairs)
    source = 2 * size
    arcs = []
    graph = np.full((source + 1, source + 1), np.inf)
    graph[source, :source] = 0
    for (row, col) in zip(*np.nonzero(np.isfinite(matrix))):
        row, col = int(row), int(col)
        if (row, col) in matched:
            arc = (size + col, row, -matrix[row, col])
        else:
            arc = (row, size + col, matrix[row, col])
        graph[arc[0], arc[1]] = arc[2]
        arcs.append(arc)
    try:
        potential = shortest_path(
            csgraph_from_dense(graph, null_value=np.inf), method='BF',
            indices=source)
    except NegativeCycleError:
        logger.debug("Rounding broke optimality; using a single assignment")
        return matched
    tight = np.zeros((source, source), dtype=np.int8)
    for (a, b, w) in arcs:
        if abs(w + potential[a] - potential[b]) <= tol:
            tight[a, b] = 1
    _, component = connected_components(
        tight, directed=True, connection='strong')
    cells = set(matched)
    for (a, b, _) in arcs:
        if a < size and tight[a, b] and component[a] == component[b]:
            cells.add((a, b - size))
    return cells


def _assign(problem: MatchingProblem, matrix, fixed=()):
    """Optimal assignment of `matrix` among those containing `fixed`

    Returns the constrained matrix and the assignment as ``(row, col)``
    pairs.
    """
    constrained = _constrain(matrix, fixed)
    try:
        row_ind, col_ind = linear_sum_assignment(constrained)
    except ValueError:
        raise Infeasible(
            "No assignment avoids non-actionable edits for %s -> %s"
            % (list(problem.left), list(problem.right)))
    pairs = list(zip(row_ind.tolist(), col_ind.tolist()))
    if any(problem.weights[r, c] is INFINITE_COST for (r, c) in pairs):
        raise Infeasible("Every assignment contains a non-actionable edit")
    return constrained, pairs


def _solve(problem: MatchingProblem):
    """Optimal assignment with the lexicographically smallest edit list

    Edits are fixed one at a time: each step keeps the smallest edit, by
    ``(kind, source, target)``, that some optimal completion of the edits
    fixed so far contains. It stops once every source and target concept is
    covered; the remaining rows only pair dummies.
    """
    size, _ = problem.shape
    if size == 0:
        return []
    m, n = len(problem.left), len(problem.right)
    matrix, tol = _cost_matrix(problem)
    fixed = []
    while True:
        constrained, pairs = _assign(problem, matrix, fixed)
        fixed_rows = {row for (row, _) in fixed}
        fixed_cols = {col for (_, col) in fixed}
        if (fixed_rows.issuperset(range(m))
                and fixed_cols.issuperset(range(n))):
            return pairs
        candidates = []
        for (row, col) in _optimal_cells(constrained, pairs, tol):
            edit = problem.edit(row, col)
            if edit is not None and (row, col) not in fixed:
                candidates.append((edit.sort_key, row, col))
        _, row, col = min(candidates)
        fixed.append((row, col))


def _edit_set(edits, src, tgt) -> EditSet:
    edits = tuple(sorted(edits, key=lambda e: e.sort_key))
    return EditSet(edits, sum((e.cost for e in edits), 0),
                   src.image_id, tgt.image_id)


def min_edit_cost(
        t: Taxonomy, policy: CostPolicy, src: ConceptAnnotation,
        tgt: ConceptAnnotation) -> Cost:
    """Total cost of :func:`min_edit_set`, from a single assignment

    Raises:
        Infeasible: if every edit set contains a non-actionable edit
    """
    problem = build_matching_problem(t, policy, src, tgt)
    if problem.shape[0] == 0:
        return 0
    matrix, _ = _cost_matrix(problem)
    _, pairs = _assign(problem, matrix)
    return sum((problem.weights[r, c] for (r, c) in pairs), 0)


def min_edit_set(
        t: Taxonomy, policy: CostPolicy, src: ConceptAnnotation,
        tgt: ConceptAnnotation) -> EditSet:
    """Globally minimal edit set transforming `src` into `tgt`

    Example:
        >>> from conceptedit.taxonomy import parse_taxonomy
        >>> t = parse_taxonomy("root furniture\\nfurniture chair\\nfurniture couch")
        >>> E = min_edit_set(
        ...     t, CostPolicy(), ConceptAnnotation('a', 'L', ['chair']),
        ...     ConceptAnnotation('b', 'L*', ['couch']))
        >>> [e.describe() for e in E], E.total_cost
        (['substitute chair -> couch'], 2)
    """
    problem = build_matching_problem(t, policy, src, tgt)
    edits = []
    for (row, col) in _solve(problem):
        edit = problem.edit(row, col)
        if edit is not None:
            edits.append(edit)
    return _edit_set(edits, src, tgt)


def _better(candidate, best):
    """Whether `candidate` ``(cost, edits)`` beats `best` canonically"""
    if best is None:
        return True
    (cost, edits), (best_cost, best_edits) = candidate, best
    if cost != best_cost:
        return cost < best_cost
    return [e.sort_key for e in edits] < [e.sort_key for e in best_edits]


def brute_force_edit_set(
        t: Taxonomy, policy: CostPolicy, src: ConceptAnnotation,
        tgt: ConceptAnnotation) -> EditSet:
    """Minimal edit set by exhaustive enumeration (test oracle)

    Enumerates every partial injective pairing of the unshared source and
    target concepts; unpaired concepts are deleted or inserted.

    Raises:
        TooLarge: if either annotation has more than six concepts
    """
    if (len(src.concepts) > BRUTE_FORCE_LIMIT
            or len(tgt.concepts) > BRUTE_FORCE_LIMIT):
        raise TooLarge(
            "Brute force is limited to %d concepts per annotation"
            % BRUTE_FORCE_LIMIT)
    check_annotation(t, src)
    check_annotation(t, tgt)
    left, right = _residuals(src, tgt)
    m, n = len(left), len(right)
    best = None
    for k in range(min(m, n) + 1):
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.permutations(range(n), k):
                edits = []
                for (i, j) in zip(rows, cols):
                    cost = policy.edit_cost(
                        t, EditKind.SUBSTITUTE, left[i], right[j])
                    edits.append(Edit.substitute(left[i], right[j], cost)
                                 if cost is not INFINITE_COST else None)
                for i in set(range(m)).difference(rows):
                    cost = policy.edit_cost(t, EditKind.DELETE, left[i])
                    edits.append(Edit.delete(left[i], cost)
                                 if cost is not INFINITE_COST else None)
                for j in set(range(n)).difference(cols):
                    cost = policy.edit_cost(
                        t, EditKind.INSERT, None, right[j])
                    edits.append(Edit.insert(right[j], cost)
                                 if cost is not INFINITE_COST else None)
                if None in edits:
                    continue
                edits.sort(key=lambda e: e.sort_key)
                total = sum((e.cost for e in edits), 0)
                if _better((total, edits), best):
                    best = (total, edits)
    if best is None:
        raise Infeasible(
            "No edit set avoids non-actionable edits for %s -> %s"
            % (src.image_id, tgt.image_id))
    return _edit_set(best[1], src, tgt)


def closest_target(
        t: Taxonomy, policy: CostPolicy, src: ConceptAnnotation,
        candidates: Sequence[ConceptAnnotation],
        candidate_limit: Optional[int] = None
        ) -> Tuple[ConceptAnnotation, EditSet]:
    """Candidate with the cheapest minimal edit set from `src`

    Ties are broken by fewer edits, then by the smaller ``image_id``.
    Candidates for which no actionable edit set exists are skipped.

    Args:
        t: taxonomy
        policy: cost policy
        src: source annotation
        candidates: annotations of the target class
        candidate_limit: if given, only the first `candidate_limit`
            candidates in ``image_id`` order are considered

    Raises:
        EmptyCandidates: if `candidates` is empty
        Infeasible: if no candidate can be reached
    """
    if len(candidates) == 0:
        raise EmptyCandidates("No candidate target images")
    labels = {c.label for c in candidates}
    if len(labels) > 1:
        raise ValueError(
            "Candidates must share one label, got %s" % sorted(labels))
    pool = sorted(candidates, key=lambda c: c.image_id)
    if candidate_limit is not None:
        pool = pool[:candidate_limit]
    costs = []
    for candidate in pool:
        try:
            costs.append((min_edit_cost(t, policy, src, candidate), candidate))
        except Infeasible:
            logger.warning(
                "Skipping candidate %s: not reachable from %s",
                candidate.image_id, src.image_id)
    if not costs:
        raise Infeasible(
            "No candidate is reachable from %s with actionable edits"
            % src.image_id)
    cheapest = min(cost for (cost, _) in costs)
    best = None
    for (cost, candidate) in costs:
        if cost != cheapest:
            continue
        edit_set = min_edit_set(t, policy, src, candidate)
        key = (len(edit_set), candidate.image_id)
        if best is None or key < best[0]:
            best = (key, candidate, edit_set)
    return best[1], best[2]


def apply_edits(
        src: ConceptAnnotation, edits: Sequence[Edit]) -> ConceptAnnotation:
    """Apply `edits` in order to the concept multiset of `src`

    Example:
        >>> a = ConceptAnnotation('a', 'L', ['chair'])
        >>> apply_edits(a, [Edit.substitute('chair', 'couch')]).concepts
        ('couch',)
    """
    concepts = src.multiset
    for edit in edits:
        if edit.kind in (EditKind.DELETE, EditKind.SUBSTITUTE):
            if concepts[edit.source] < 1:
                raise MissingSource(
                    "Cannot %s: %r is not present in %s"
                    % (edit.describe(), edit.source, src.image_id))
            concepts[edit.source] -= 1
        if edit.kind in (EditKind.INSERT, EditKind.SUBSTITUTE):
            concepts[edit.target] += 1
    return src.with_concepts(concepts.elements())


def load_corpus(source, taxonomy: Optional[Taxonomy] = None
                ) -> List[ConceptAnnotation]:
    """Read an annotation corpus (one JSON record per line)

    If `taxonomy` is given, annotations with unknown concepts are rejected.
    Image ids must be unique.
    """
    if hasattr(source, 'read'):
        lines = source.read().splitlines()
    else:
        with open(source, encoding='utf-8') as in_fh:
            lines = in_fh.read().splitlines()
    corpus = []
    seen = set()
    for (lineno, line) in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc_info:
            raise ParseError("corpus line %d: %s" % (lineno, exc_info))
        annotation = ConceptAnnotation.from_dict(record)
        if annotation.image_id in seen:
            raise ParseError(
                "corpus line %d: duplicate image id %r"
                % (lineno, annotation.image_id))
        seen.add(annotation.image_id)
        if taxonomy is not None:
            check_annotation(taxonomy, annotation)
        corpus.append(annotation)
    return corpus


def dump_corpus(corpus: Sequence[ConceptAnnotation], out_fh):
    """Write `corpus` in the format read by :func:`load_corpus`"""
    for annotation in corpus:
        out_fh.write(json.dumps(annotation.to_dict(), sort_keys=True) + "\n")
