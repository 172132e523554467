"""Ordering of edits: Local, Global and Local-Global strategies

Global statistics are collected in an :class:`ImportanceTable`: running the
minimal edit set computation over every image of the source class, every
edit is tallied under the unordered concept pair it touches. Insertions and
deletions pair their concept with the empty partner :data:`EMPTY`. The
importance score of a pair ``(a, b)`` is

    (#insert − #delete + #substitute(a→b) − #substitute(b→a)) / #occurrences

so that a positive score endorses inserting the concept (or substituting
``a`` by ``b``), and a negative score endorses deleting the concept (or
substituting ``b`` by ``a``).
"""
import csv
import enum
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._types import PairKey
from .editplan import ConceptAnnotation, Edit, EditSet, closest_target
from .exceptions import (
    EmptyCorpus, Infeasible, ParseError, UnknownEdit, UnparsableResponse)
from .prompts import local_edit_prompt, parse_selector_step
from .schemas import SelectorRequest
from .taxonomy import INFINITE_COST, CostPolicy, EditKind, Taxonomy

__all__ = [
    'EMPTY',
    'OrderingStrategy',
    'ImportanceEntry',
    'ImportanceTable',
    'pair_key',
    'compute_importance',
    'order_global',
    'order_local_global',
    'ranked_table_edits',
    'is_applicable',
    'next_edit_global',
    'local_edit_lists',
    'next_edit_local',
    'select_local_edit',
]

logger = logging.getLogger(__name__)

#: Partner of a concept in the pair key of an insertion or deletion
EMPTY = '∅'


class OrderingStrategy(enum.Enum):
    """Strategy deciding which edit executes next"""
    LOCAL = 'local'
    GLOBAL = 'global'
    LOCAL_GLOBAL = 'local-global'


def pair_key(edit: Edit) -> PairKey:
    """Importance-table key of `edit`

    >>> pair_key(Edit.delete('car'))
    ('car', '∅')
    >>> pair_key(Edit.substitute('couch', 'bed'))
    ('bed', 'couch')
    """
    if edit.kind is EditKind.INSERT:
        return (edit.target, EMPTY)
    elif edit.kind is EditKind.DELETE:
        return (edit.source, EMPTY)
    return tuple(sorted((edit.source, edit.target)))


def _direction(edit: Edit) -> int:
    """+1 if a positive score endorses `edit`, -1 otherwise"""
    if edit.kind is EditKind.INSERT:
        return 1
    elif edit.kind is EditKind.DELETE:
        return -1
    return 1 if edit.source < edit.target else -1


@dataclass(frozen=True)
class ImportanceEntry:
    """Tallies of all edits touching one concept pair"""
    pair: PairKey
    insert_count: int = 0
    delete_count: int = 0
    sub_forward: int = 0
    sub_backward: int = 0
    std: Optional[float] = None

    @property
    def occurrences(self) -> int:
        return (self.insert_count + self.delete_count + self.sub_forward
                + self.sub_backward)

    @property
    def score(self) -> Fraction:
        numerator = (self.insert_count - self.delete_count + self.sub_forward
                     - self.sub_backward)
        return Fraction(numerator, self.occurrences)

    def endorsed_edit(self) -> Optional[Edit]:
        """The directed edit the score endorses (None for a zero score)"""
        score = self.score
        if score == 0:
            return None
        a, b = self.pair
        if b == EMPTY:
            return Edit.insert(a) if score > 0 else Edit.delete(a)
        return Edit.substitute(a, b) if score > 0 else Edit.substitute(b, a)


def _tally(edits) -> Dict[PairKey, List[int]]:
    counts = {}
    for edit in edits:
        key = pair_key(edit)
        entry = counts.setdefault(key, [0, 0, 0, 0])
        if edit.kind is EditKind.INSERT:
            entry[0] += 1
        elif edit.kind is EditKind.DELETE:
            entry[1] += 1
        elif _direction(edit) > 0:
            entry[2] += 1
        else:
            entry[3] += 1
    return counts


def _merge(tallies) -> Dict[PairKey, List[int]]:
    merged = {}
    for counts in tallies:
        for (key, values) in counts.items():
            entry = merged.setdefault(key, [0, 0, 0, 0])
            for i in range(4):
                entry[i] += values[i]
    return merged


class ImportanceTable:
    """Corpus-level importance scores of concept edits

    Args:
        entries: iterable of :class:`ImportanceEntry`
        class_pair: the ``(L, L*)`` transition the table was computed for
    """

    def __init__(self, entries=(), class_pair=(None, None)):
        self._entries = {}
        for entry in entries:
            if entry.occurrences < 1:
                raise ValueError("Entry %s has no occurrences" % (entry.pair,))
            self._entries[entry.pair] = entry
        self.class_pair = tuple(class_pair)

    def __len__(self):
        return len(self._entries)

    def __contains__(self, pair):
        return pair in self._entries

    def __iter__(self):
        return iter(self.ranked())

    def __eq__(self, other):
        if not isinstance(other, ImportanceTable):
            return NotImplemented
        return (self._entries == other._entries
                and self.class_pair == other.class_pair)

    def __repr__(self):
        return "ImportanceTable(%s -> %s, %d pairs)" % (
            self.class_pair[0], self.class_pair[1], len(self))

    @property
    def entries(self) -> Dict[PairKey, ImportanceEntry]:
        return dict(self._entries)

    def get(self, pair) -> Optional[ImportanceEntry]:
        return self._entries.get(tuple(pair))

    def score(self, pair) -> Optional[Fraction]:
        entry = self.get(pair)
        return None if entry is None else entry.score

    def endorsement(self, edit: Edit) -> Optional[Fraction]:
        """Score of the pair of `edit`, signed so that positive endorses it"""
        entry = self.get(pair_key(edit))
        if entry is None:
            return None
        return _direction(edit) * entry.score

    def ranked(self) -> List[ImportanceEntry]:
        """Entries by descending ``|score|``, ties by pair"""
        return sorted(
            self._entries.values(), key=lambda e: (-abs(e.score), e.pair))

    def top(self, k: int) -> List[ImportanceEntry]:
        return self.ranked()[:k]

    def n_nonzero(self) -> int:
        """Number of pairs with ``|score| > 0``"""
        return sum(1 for e in self._entries.values() if e.score != 0)

    def write(self, out_fh):
        """Write the table as a tab-separated document"""
        out_fh.write("# class_pair\t%s\t%s\n" % self.class_pair)
        writer = csv.writer(out_fh, delimiter='\t', lineterminator='\n')
        writer.writerow([
            'left', 'right', 'insert_count', 'delete_count', 'sub_forward',
            'sub_backward', 'occurrences', 'score', 'std'])
        for entry in self.ranked():
            writer.writerow([
                entry.pair[0], entry.pair[1], entry.insert_count,
                entry.delete_count, entry.sub_forward, entry.sub_backward,
                entry.occurrences, str(entry.score),
                '' if entry.std is None else repr(entry.std)])

    @classmethod
    def read(cls, in_fh) -> 'ImportanceTable':
        """Read a table written by :meth:`write`"""
        header = in_fh.readline().rstrip('\n').split('\t')
        if len(header) != 3 or header[0] != '# class_pair':
            raise ParseError("Missing class_pair header in importance table")
        reader = csv.DictReader(in_fh, delimiter='\t')
        entries = []
        try:
            for row in reader:
                entries.append(ImportanceEntry(
                    (row['left'], row['right']), int(row['insert_count']),
                    int(row['delete_count']), int(row['sub_forward']),
                    int(row['sub_backward']),
                    float(row['std']) if row['std'] else None))
        except (KeyError, ValueError) as exc_info:
            raise ParseError("Invalid importance table row: %s" % exc_info)
        return cls(entries, (header[1], header[2]))

    def format(self, top: int = 10) -> str:
        """Text report of the most prominent pairs"""
        lines = [
            "Importance and standard deviation of the most prominent "
            "concept edits (%s -> %s)" % self.class_pair,
            "%-32s %12s %10s %6s" % ('edit', 'importance', 'std', 'count'),
        ]
        for entry in self.top(top):
            edit = entry.endorsed_edit()
            name = edit.describe() if edit is not None else (
                "%s / %s" % entry.pair)
            std = '-' if entry.std is None else "%.2f" % entry.std
            lines.append("%-32s %12.2f %10s %6d" % (
                name, float(entry.score), std, entry.occurrences))
        lines.append("#Importance > 0: %d" % self.n_nonzero())
        return "\n".join(lines)


def _single_label(corpus, what):
    if len(corpus) == 0:
        raise EmptyCorpus("The %s corpus is empty" % what)
    labels = {a.label for a in corpus}
    if len(labels) > 1:
        raise ValueError(
            "The %s corpus mixes labels %s" % (what, sorted(labels)))
    return labels.pop()


def compute_importance(
        t: Taxonomy, policy: CostPolicy,
        corpus_L: Sequence[ConceptAnnotation],
        corpus_Lstar: Sequence[ConceptAnnotation],
        jobs: int = 1, candidate_limit: Optional[int] = None,
        n_bootstrap: int = 0, seed: int = 0) -> ImportanceTable:
    """Tally the closest-target edit sets of all source images

    Args:
        t: taxonomy
        policy: cost policy
        corpus_L: images of the source class L
        corpus_Lstar: images of the target class L*
        jobs: number of worker threads for the per-image edit sets
        candidate_limit: passed to
            :func:`~conceptedit.editplan.closest_target`
        n_bootstrap: if > 0, number of bootstrap resamples of the source
            images used to estimate the standard deviation of each score
        seed: seed of the bootstrap resampling

    Raises:
        EmptyCorpus: if either corpus is empty
    """
    source_label = _single_label(corpus_L, 'source')
    target_label = _single_label(corpus_Lstar, 'target')
    sources = sorted(corpus_L, key=lambda a: a.image_id)

    def edits_of(src):
        try:
            _, edit_set = closest_target(
                t, policy, src, corpus_Lstar, candidate_limit=candidate_limit)
        except Infeasible:
            logger.warning("No reachable target for %s", src.image_id)
            return {}
        return _tally(edit_set.edits)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            tallies = list(executor.map(edits_of, sources))
    else:
        tallies = [edits_of(src) for src in sources]
    merged = _merge(tallies)
    entries = {
        key: ImportanceEntry(key, *values) for (key, values) in merged.items()}
    if n_bootstrap > 0 and entries:
        rng = np.random.default_rng(seed)
        samples = {key: [] for key in entries}
        for _ in range(n_bootstrap):
            picks = rng.integers(0, len(tallies), size=len(tallies))
            resampled = _merge(tallies[i] for i in picks)
            for key in entries:
                values = resampled.get(key)
                if values is None:
                    samples[key].append(0.0)
                else:
                    samples[key].append(
                        float(ImportanceEntry(key, *values).score))
        ddof = 1 if n_bootstrap > 1 else 0
        entries = {
            key: replace(entry, std=float(np.std(samples[key], ddof=ddof)))
            for (key, entry) in entries.items()}
    table = ImportanceTable(entries.values(), (source_label, target_label))
    logger.info(
        "Importance table %s -> %s: %d pairs from %d images",
        source_label, target_label, len(table), len(sources))
    return table


def _rank_key(edit: Edit, table: ImportanceTable):
    endorsement = table.endorsement(edit)
    if endorsement is None:
        return (2, 0, edit.sort_key)
    if endorsement > 0:
        return (0, -endorsement, edit.sort_key)
    return (1, -endorsement, edit.sort_key)


def _order(edits, table) -> List[Edit]:
    return sorted(edits, key=lambda e: _rank_key(e, table))


def order_global(E, table: ImportanceTable) -> List[Edit]:
    """Edits of `E` by descending importance of their concept pair

    Edits whose direction agrees with the sign of their pair's score come
    first, by descending ``|score|``; edits contradicted by their score come
    next, least contradicted first; edits of pairs absent from the table come
    last. Ties are broken by the lexicographic order of the edits.
    """
    edits = E.edits if isinstance(E, EditSet) else tuple(E)
    return _order(edits, table)


def order_local_global(E, table: ImportanceTable) -> List[Edit]:
    """Image-specific edits of `E`, ordered by global importance

    Uses the same rule as :func:`order_global`.
    """
    edits = E.edits if isinstance(E, EditSet) else tuple(E)
    return _order(edits, table)


def ranked_table_edits(
        table: ImportanceTable, t: Taxonomy,
        policy: CostPolicy) -> List[Edit]:
    """Directed edits endorsed by `table`, most important first

    Pairs with a zero score and non-actionable edits are left out; each edit
    carries its cost under `policy`.
    """
    edits = []
    for entry in table.ranked():
        edit = entry.endorsed_edit()
        if edit is None:
            continue
        cost = policy.edit_cost(t, edit.kind, edit.source, edit.target)
        if cost is INFINITE_COST:
            continue
        edits.append(replace(edit, cost=cost))
    return _order(edits, table)


def is_applicable(edit: Edit, scene: ConceptAnnotation,
                  planned: bool = False) -> bool:
    """Whether `edit` makes sense for the current `scene`

    Deletions and substitutions need their source to be present. Insertions
    from the image's own plan (`planned`) always apply, as annotations are
    multisets; other insertions need their target to be absent.
    """
    concepts = scene.multiset
    if edit.kind is EditKind.INSERT:
        return planned or concepts[edit.target] == 0
    return concepts[edit.source] > 0


def next_edit_global(
        table_edits: Sequence[Edit], remaining: List[Edit],
        scene: ConceptAnnotation, table: ImportanceTable
        ) -> Tuple[Optional[Edit], str]:
    """Next edit of the Global strategy

    The highest-ranked table edit applicable to `scene` wins; without one,
    the highest-ranked applicable edit of the image's `remaining` plan is
    used. A chosen edit that is also part of the plan is removed from
    `remaining`.

    Returns:
        tuple ``(edit, selection)`` where `selection` is ``'table'`` or
        ``'plan'``; ``(None, 'exhausted')`` if nothing is applicable.
    """
    for edit in table_edits:
        planned = edit in remaining
        if is_applicable(edit, scene, planned):
            if planned:
                remaining.remove(edit)
            return edit, 'table'
    for edit in _order(remaining, table):
        if is_applicable(edit, scene, planned=True):
            remaining.remove(edit)
            return edit, 'plan'
    return None, 'exhausted'


def local_edit_lists(remaining: Sequence[Edit]):
    """Add and remove lists for the local edit prompt

    Substitutions come first, aligned at the same positions in both lists,
    followed by the deletions (remove list) and insertions (add list).
    """
    substitutions = sorted(
        (e for e in remaining if e.kind is EditKind.SUBSTITUTE),
        key=lambda e: e.sort_key)
    add_list = [e.target for e in substitutions]
    remove_list = [e.source for e in substitutions]
    for edit in sorted(remaining, key=lambda e: e.sort_key):
        if edit.kind is EditKind.INSERT:
            add_list.append(edit.target)
        elif edit.kind is EditKind.DELETE:
            remove_list.append(edit.source)
    return add_list, remove_list


def next_edit_local(
        selector, current_image: str, remaining: Sequence[Edit],
        objects: Sequence[str] = ()) -> Edit:
    """Ask `selector` for the next edit out of `remaining`

    Args:
        selector: client with a ``select(SelectorRequest)`` method
        current_image: reference of the current image
        remaining: edits not yet applied
        objects: concepts currently present in the image

    Returns:
        the element of `remaining` named by the selector's response. For
        insertions and deletions the third element of the response (anchor
        or backdrop) is attached as :attr:`Edit.anchor`.

    Raises:
        UnparsableResponse: if the response is not a valid step
        UnknownEdit: if the step is not one of `remaining`
    """
    if len(remaining) == 0:
        raise ValueError("No remaining edits to select from")
    add_list, remove_list = local_edit_lists(remaining)
    prompt = local_edit_prompt(sorted(objects), add_list, remove_list)
    response = selector.select(SelectorRequest(current_image, prompt))
    verb, first, second = parse_selector_step(response.text)
    for edit in remaining:
        if verb == 'replace':
            if (edit.kind is EditKind.SUBSTITUTE and edit.source == first
                    and edit.target == second):
                return edit
        elif verb == 'add':
            if edit.kind is EditKind.INSERT and edit.target == first:
                return edit.with_anchor(second)
        elif verb == 'remove':
            if edit.kind is EditKind.DELETE and edit.source == first:
                return edit.with_anchor(second)
    raise UnknownEdit(
        "Step %r names no remaining edit" % ([verb, first, second],))


def select_local_edit(
        selector, current_image: str, remaining: Sequence[Edit],
        objects: Sequence[str] = (), attempts: int = 3,
        call=None) -> Tuple[Edit, str]:
    """:func:`next_edit_local` with retries and a deterministic fallback

    After `attempts` unparsable or unknown responses, the lexicographically
    first remaining edit is used.

    Args:
        call: optional wrapper ``call(func, *args)`` through which the
            selector is invoked (e.g. to add service retries)

    Returns:
        tuple ``(edit, selection)`` with `selection` ``'selector'`` or
        ``'fallback'``
    """
    failures = Counter()
    for attempt in range(attempts):
        try:
            if call is None:
                edit = next_edit_local(
                    selector, current_image, remaining, objects)
            else:
                edit = call(
                    next_edit_local, selector, current_image, remaining,
                    objects)
            return edit, 'selector'
        except (UnparsableResponse, UnknownEdit) as exc_info:
            failures[type(exc_info).__name__] += 1
            logger.debug(
                "Selector attempt %d rejected: %s", attempt + 1, exc_info)
    fallback = min(remaining, key=lambda e: e.sort_key)
    logger.warning(
        "Selector gave no usable step after %d attempts (%s); "
        "falling back to %s", attempts, dict(failures), fallback.describe())
    return fallback, 'fallback'
