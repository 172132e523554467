"""Tests for minimal edit sets and closest-target search"""
import io
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from conceptedit.editplan import (
    ConceptAnnotation, Edit, EditSet, apply_edits, brute_force_edit_set,
    build_matching_problem, closest_target, dump_corpus, load_corpus,
    min_edit_cost, min_edit_set)
from conceptedit.exceptions import (
    EmptyCandidates, Infeasible, MissingSource, ParseError, TooLarge,
    UnknownConcept)
from conceptedit.taxonomy import (
    INFINITE_COST, CostPolicy, EditKind, Taxonomy, deletion_cost,
    insertion_cost, load_taxonomy)


@pytest.fixture
def testdir(request):
    return os.path.splitext(request.module.__file__)[0]


@pytest.fixture
def taxonomy(testdir):
    return load_taxonomy(os.path.join(testdir, 'taxonomy.txt'))


def L(image_id, *concepts):
    return ConceptAnnotation(image_id, 'L', concepts)


def Lstar(image_id, *concepts):
    return ConceptAnnotation(image_id, 'L*', concepts)


def random_instance(rng):
    """Random taxonomy (at most 8 nodes, weights 1..4) and annotation pair"""
    n_nodes = int(rng.integers(2, 9))
    names = ['c%d' % i for i in range(n_nodes)]
    edges = {}
    for i in range(1, n_nodes):
        parent = names[rng.integers(0, i)]
        edges[frozenset((parent, names[i]))] = (
            parent, names[i], int(rng.integers(1, 5)))
    for _ in range(rng.integers(0, 3)):
        a, b = rng.choice(n_nodes, size=2, replace=False)
        key = frozenset((names[a], names[b]))
        if key not in edges:
            edges[key] = (names[a], names[b], int(rng.integers(1, 5)))
    t = Taxonomy(names[0], edges.values())
    src = L('src', *rng.choice(names, size=rng.integers(0, 6)))
    tgt = Lstar('tgt', *rng.choice(names, size=rng.integers(0, 6)))
    return t, src, tgt


def test_identity(taxonomy):
    E = min_edit_set(
        taxonomy, CostPolicy(), L('a', 'chair', 'lamp'),
        Lstar('b', 'lamp', 'chair'))
    assert len(E) == 0
    assert E.total_cost == 0
    assert (E.source_image, E.target_image) == ('a', 'b')


def test_substitution_beats_replacement(taxonomy):
    E = min_edit_set(taxonomy, CostPolicy(), L('a', 'chair'), Lstar('b', 'couch'))
    assert E.edits == (Edit.substitute('chair', 'couch', 2),)
    assert E.total_cost == 2


def test_shared_concepts_are_free(taxonomy):
    E = min_edit_set(
        taxonomy, CostPolicy(), L('a', 'chair', 'lamp'), Lstar('b', 'chair'))
    assert E.edits == (Edit.delete('lamp', deletion_cost(taxonomy, 'lamp')),)


def test_repeated_concepts(taxonomy):
    E = min_edit_set(
        taxonomy, CostPolicy(), L('a', 'chair', 'chair', 'chair'),
        Lstar('b', 'chair', 'couch'))
    assert [e.describe() for e in E] == [
        'delete chair', 'substitute chair -> couch']
    E = min_edit_set(
        taxonomy, CostPolicy(), L('a', 'window'),
        Lstar('b', 'window', 'window', 'curtain'))
    assert [e.describe() for e in E] == ['insert curtain', 'insert window']
    assert E.total_cost == 4


def test_matching_problem_layout(taxonomy):
    problem = build_matching_problem(
        taxonomy, CostPolicy(), L('a', 'chair', 'lamp', 'window'),
        Lstar('b', 'couch', 'window'))
    assert problem.left == ('chair', 'lamp')
    assert problem.right == ('couch',)
    assert problem.shape == (3, 3)
    assert problem.dummy_left == ('+couch',)
    assert problem.dummy_right == ('-chair', '-lamp')
    w = problem.weights
    assert w[0, 0] == 2  # chair -> couch
    assert w[0, 1] == 2  # delete chair
    assert w[0, 2] is INFINITE_COST  # chair only pairs with its own dummy
    assert w[1, 1] is INFINITE_COST
    assert w[2, 0] == insertion_cost(taxonomy, 'couch')
    assert w[2, 1] == 0 and w[2, 2] == 0


def test_nonactionable_edits_are_avoided(taxonomy):
    policy = CostPolicy.from_strings(['substitute:chair->couch'])
    E = min_edit_set(taxonomy, policy, L('a', 'chair'), Lstar('b', 'couch'))
    assert [e.describe() for e in E] == ['delete chair', 'insert couch']
    assert E.total_cost == 4
    policy = CostPolicy.from_strings(
        ['substitute:chair->couch', 'delete:chair'])
    with pytest.raises(Infeasible):
        min_edit_set(taxonomy, policy, L('a', 'chair'), Lstar('b', 'couch'))
    with pytest.raises(Infeasible):
        brute_force_edit_set(
            taxonomy, policy, L('a', 'chair'), Lstar('b', 'couch'))


def test_unknown_concept(taxonomy):
    with pytest.raises(UnknownConcept):
        min_edit_set(taxonomy, CostPolicy(), L('a', 'piano'), Lstar('b'))


def test_brute_force_examples(taxonomy):
    E = brute_force_edit_set(
        taxonomy, CostPolicy(), L('a', 'lamp'), Lstar('b', 'lamp'))
    assert E.total_cost == 0
    E = brute_force_edit_set(taxonomy, CostPolicy(), L('a', 'chair'), Lstar('b'))
    assert E.edits == (Edit.delete('chair', 2),)
    with pytest.raises(TooLarge):
        brute_force_edit_set(
            taxonomy, CostPolicy(), L('a', *(['chair'] * 7)), Lstar('b'))


def test_against_brute_force():
    """Solver and exhaustive enumeration agree on random instances"""
    rng = np.random.default_rng(2024)
    policy = CostPolicy()
    for _ in range(200):
        t, src, tgt = random_instance(rng)
        E = min_edit_set(t, policy, src, tgt)
        oracle = brute_force_edit_set(t, policy, src, tgt)
        assert E.total_cost == oracle.total_cost
        assert E.edits == oracle.edits
        assert E.total_cost == sum(e.cost for e in E)
        assert min_edit_cost(t, policy, src, tgt) == oracle.total_cost
        assert apply_edits(src, E.edits).concepts == tgt.concepts
        bound = (sum(deletion_cost(t, c) for c in src.concepts)
                 + sum(insertion_cost(t, c) for c in tgt.concepts))
        assert E.total_cost <= bound
        reverse = min_edit_set(t, policy, tgt, src)
        assert reverse.total_cost == E.total_cost


def test_against_brute_force_with_policy():
    rng = np.random.default_rng(99)
    for _ in range(100):
        t, src, tgt = random_instance(rng)
        nodes = sorted(t.nodes)
        specs = ['delete:%s' % rng.choice(nodes),
                 'insert:%s' % rng.choice(nodes),
                 'substitute:%s->%s' % tuple(rng.choice(nodes, 2, False))]
        policy = CostPolicy.from_strings(specs)
        try:
            oracle = brute_force_edit_set(t, policy, src, tgt)
        except Infeasible:
            with pytest.raises(Infeasible):
                min_edit_set(t, policy, src, tgt)
            continue
        E = min_edit_set(t, policy, src, tgt)
        assert E.total_cost == oracle.total_cost
        assert E.edits == oracle.edits
        for edit in E:
            assert policy.is_actionable(edit.kind, edit.source, edit.target)


def test_deterministic_result(taxonomy):
    """Equal-cost alternatives always resolve to the same edit set"""
    src = L('a', 'chair', 'lamp')
    tgt = Lstar('b', 'couch')
    results = {min_edit_set(taxonomy, CostPolicy(), src, tgt).edits
               for _ in range(5)}
    assert len(results) == 1
    (edits,) = results
    assert len(edits) == 2
    assert [e.describe() for e in edits] == [
        'delete chair', 'substitute lamp -> couch']


def test_lexicographic_tie_break(taxonomy):
    """At equal cost the smallest sorted edit list wins, even if longer"""
    E = min_edit_set(
        taxonomy, CostPolicy(), L('a', 'chair'), Lstar('b', 'window'))
    assert [e.describe() for e in E] == ['delete chair', 'insert window']
    assert E.total_cost == 4
    E = min_edit_set(
        taxonomy, CostPolicy(), L('a', 'chair', 'lamp', 'window'),
        Lstar('b', 'couch', 'curtain'))
    assert [e.describe() for e in E] == [
        'delete chair', 'substitute lamp -> couch',
        'substitute window -> curtain']
    assert E.edits == brute_force_edit_set(
        taxonomy, CostPolicy(), L('a', 'chair', 'lamp', 'window'),
        Lstar('b', 'couch', 'curtain')).edits


def test_runtime_large_instance():
    rng = np.random.default_rng(0)
    names = ['k%d' % i for i in range(80)]
    edges = [(names[rng.integers(0, i)], names[i], int(rng.integers(1, 5)))
             for i in range(1, len(names))]
    t = Taxonomy(names[0], edges)
    src = L('a', *rng.choice(names[40:], size=50))
    tgt = Lstar('b', *rng.choice(names[:40], size=50))
    start = time.perf_counter()
    E = min_edit_set(t, CostPolicy(), src, tgt)
    assert time.perf_counter() - start < 30.0
    assert apply_edits(src, E.edits).concepts == tgt.concepts


def test_closest_target(taxonomy):
    policy = CostPolicy()
    src = L('a', 'chair')
    target, E = closest_target(taxonomy, policy, src, [Lstar('only', 'lamp')])
    assert target.image_id == 'only'
    candidates = [Lstar('x2', 'couch', 'lamp'), Lstar('x1', 'couch')]
    target, E = closest_target(taxonomy, policy, src, candidates)
    assert target.image_id == 'x1'
    assert E.total_cost == 2
    # equal cost and edit count: smaller image id
    candidates = [Lstar('z', 'couch'), Lstar('y', 'lamp')]
    target, _ = closest_target(taxonomy, policy, src, candidates)
    assert target.image_id == 'y'
    target, _ = closest_target(
        taxonomy, policy, src, [Lstar('b', 'lamp', 'chair'), Lstar('a', 'couch')],
        candidate_limit=1)
    assert target.image_id == 'a'


def test_closest_target_errors(taxonomy):
    src = L('a', 'chair')
    with pytest.raises(EmptyCandidates):
        closest_target(taxonomy, CostPolicy(), src, [])
    with pytest.raises(ValueError):
        closest_target(
            taxonomy, CostPolicy(), src, [Lstar('b', 'couch'), L('c', 'lamp')])
    policy = CostPolicy.from_strings(['delete:chair', 'substitute:chair->couch'])
    target, _ = closest_target(
        taxonomy, policy, src, [Lstar('b', 'couch'), Lstar('c', 'chair')])
    assert target.image_id == 'c'
    with pytest.raises(Infeasible):
        closest_target(taxonomy, policy, src, [Lstar('b', 'couch')])


def test_apply_edits():
    src = L('a', 'chair')
    assert apply_edits(src, []) == src
    assert apply_edits(
        src, [Edit.substitute('chair', 'couch')]).concepts == ('couch',)
    with pytest.raises(MissingSource):
        apply_edits(src, [Edit.delete('lamp')])
    with pytest.raises(MissingSource):
        apply_edits(src, [Edit.delete('chair'), Edit.delete('chair')])


def test_edit_validation():
    with pytest.raises(ValueError):
        Edit.substitute('chair', 'Chair')
    with pytest.raises(ValueError):
        Edit(EditKind.INSERT, 'chair', 'couch')
    with pytest.raises(ValueError):
        Edit(EditKind.DELETE, None, 'couch')
    with pytest.raises(ValueError):
        Edit.delete('chair', cost=-1)
    assert Edit.insert('curtain', anchor='window') == Edit.insert('curtain')
    assert Edit.delete('lamp') < Edit.insert('chair') < Edit.substitute('a', 'b')


def test_edit_set_serialization():
    E = EditSet(
        (Edit.delete('car', Fraction(7, 2)),
         Edit.insert('curtain', 1, anchor='window')),
        Fraction(9, 2), 'a', 'b')
    data = E.to_dict()
    assert data['total_cost'] == '9/2'
    assert data['edits'][1]['anchor'] == 'window'
    restored = EditSet.from_dict(data)
    assert restored == E
    assert restored.edits[1].anchor == 'window'
    with pytest.raises(ParseError):
        EditSet.from_dict({'edits': []})


def test_load_corpus(testdir, taxonomy):
    corpus = load_corpus(os.path.join(testdir, 'corpus.jsonl'), taxonomy)
    assert [a.image_id for a in corpus] == ['living1', 'living2', 'bed1', 'bed2']
    assert corpus[1].concepts == ('couch', 'curtain', 'window')
    assert corpus[2].image == 'images/bed1.png'
    assert corpus[3].concepts == ('couch',)
    out = io.StringIO()
    dump_corpus(corpus, out)
    assert load_corpus(io.StringIO(out.getvalue())) == corpus
    sources = [a for a in corpus if a.label == 'Living']
    targets = [a for a in corpus if a.label == 'Bedroom']
    target, E = closest_target(taxonomy, CostPolicy(), sources[0], targets)
    assert target.image_id == 'bed1'
    assert [e.describe() for e in E] == ['substitute chair -> couch']


def test_load_corpus_errors(testdir, taxonomy):
    with pytest.raises(ParseError, match="duplicate"):
        load_corpus(os.path.join(testdir, 'duplicate.jsonl'))
    with pytest.raises(UnknownConcept, match="piano"):
        load_corpus(os.path.join(testdir, 'unknown.jsonl'), taxonomy)
    assert len(load_corpus(os.path.join(testdir, 'unknown.jsonl'))) == 1
    with pytest.raises(ParseError, match="line 2"):
        load_corpus(io.StringIO('{"image_id": "a", "label": "L", '
                                '"concepts": []}\nnot json\n'))
    with pytest.raises(ParseError):
        load_corpus(io.StringIO('{"image_id": "a"}\n'))
