"""Tests for importance statistics and the three ordering strategies"""
import io
import os
import random
from fractions import Fraction

import pytest

from conceptedit.backends import ScriptedSelector
from conceptedit.editplan import ConceptAnnotation, Edit, EditSet, load_corpus
from conceptedit.exceptions import EmptyCorpus, UnknownEdit, UnparsableResponse
from conceptedit.ordering import (
    EMPTY, ImportanceEntry, ImportanceTable, compute_importance,
    is_applicable, local_edit_lists, next_edit_global, next_edit_local,
    order_global, order_local_global, pair_key, ranked_table_edits,
    select_local_edit)
from conceptedit.taxonomy import CostPolicy, load_taxonomy


@pytest.fixture
def testdir(request):
    return os.path.splitext(request.module.__file__)[0]


@pytest.fixture
def taxonomy(testdir):
    return load_taxonomy(os.path.join(testdir, 'taxonomy.txt'))


@pytest.fixture
def corpus(testdir, taxonomy):
    corpus = load_corpus(os.path.join(testdir, 'corpus.jsonl'), taxonomy)
    stop = [a for a in corpus if a.label == 'Stop']
    move = [a for a in corpus if a.label == 'Move']
    return stop, move


@pytest.fixture
def table(testdir):
    filename = os.path.join(testdir, 'importance.tsv')
    with open(filename, encoding='utf-8') as in_fh:
        return ImportanceTable.read(in_fh)


def scene(*concepts):
    return ConceptAnnotation('x', 'Stop', concepts)


def test_pair_key():
    assert pair_key(Edit.insert('curtain')) == ('curtain', EMPTY)
    assert pair_key(Edit.delete('car')) == ('car', EMPTY)
    assert pair_key(Edit.substitute('car', 'bus')) == ('bus', 'car')
    assert pair_key(Edit.substitute('bus', 'car')) == ('bus', 'car')


def test_entry_score():
    entry = ImportanceEntry(('bus', 'car'), sub_forward=3, sub_backward=1)
    assert entry.occurrences == 4
    assert entry.score == Fraction(1, 2)
    assert entry.endorsed_edit() == Edit.substitute('bus', 'car')
    entry = ImportanceEntry(('car', EMPTY), insert_count=1, delete_count=2)
    assert entry.endorsed_edit() == Edit.delete('car')
    entry = ImportanceEntry(('bus', 'car'), sub_forward=2, sub_backward=2)
    assert entry.score == 0
    assert entry.endorsed_edit() is None
    with pytest.raises(ValueError):
        ImportanceTable([ImportanceEntry(('car', EMPTY))])


def test_deletion_in_every_plan(taxonomy, corpus):
    """Deleting the car is the only edit of every closest-target plan"""
    stop, move = corpus
    table = compute_importance(taxonomy, CostPolicy(), stop, move)
    assert table.class_pair == ('Stop', 'Move')
    assert len(table) == 1
    entry = table.get(('car', EMPTY))
    assert entry.delete_count == 3
    assert entry.occurrences == 3
    assert entry.score == -1
    assert table.n_nonzero() == 1


def test_insertion_in_every_plan(taxonomy, corpus):
    stop, move = corpus
    table = compute_importance(taxonomy, CostPolicy(), move, stop)
    assert table.class_pair == ('Move', 'Stop')
    assert table.score(('car', EMPTY)) == 1


def test_single_insertion(taxonomy):
    table = compute_importance(
        taxonomy, CostPolicy(),
        [ConceptAnnotation('a', 'Living', ['window'])],
        [ConceptAnnotation('b', 'Bedroom', ['window', 'curtain'])])
    assert table.entries == {
        ('curtain', EMPTY): ImportanceEntry(('curtain', EMPTY), 1, 0, 0, 0)}
    assert table.score(('curtain', EMPTY)) == 1


def test_balanced_substitutions(taxonomy):
    """Substitutions in both directions cancel"""
    sources = [ConceptAnnotation('a1', 'L', ['bus', 'tree']),
               ConceptAnnotation('a2', 'L', ['car', 'pole'])]
    targets = [ConceptAnnotation('b1', 'L*', ['car', 'tree']),
               ConceptAnnotation('b2', 'L*', ['bus', 'pole'])]
    table = compute_importance(taxonomy, CostPolicy(), sources, targets)
    entry = table.get(('bus', 'car'))
    assert (entry.sub_forward, entry.sub_backward) == (1, 1)
    assert entry.score == 0
    assert table.n_nonzero() == 0


def test_importance_invariants(taxonomy, corpus):
    stop, move = corpus
    sources = stop + [ConceptAnnotation('s4', 'Stop', ['bus', 'tree']),
                      ConceptAnnotation('s5', 'Stop', ['car', 'car', 'sky'])]
    targets = move + [ConceptAnnotation('m4', 'Move', ['curtain', 'pole'])]
    table = compute_importance(taxonomy, CostPolicy(), sources, targets)
    for entry in table.entries.values():
        assert entry.occurrences >= 1
        assert -1 <= entry.score <= 1
    shuffled_sources = list(sources)
    shuffled_targets = list(targets)
    random.Random(3).shuffle(shuffled_sources)
    random.Random(4).shuffle(shuffled_targets)
    assert compute_importance(
        taxonomy, CostPolicy(), shuffled_sources, shuffled_targets) == table
    assert compute_importance(
        taxonomy, CostPolicy(), sources, targets, jobs=4) == table


def test_importance_errors(taxonomy, corpus):
    stop, move = corpus
    with pytest.raises(EmptyCorpus):
        compute_importance(taxonomy, CostPolicy(), [], move)
    with pytest.raises(EmptyCorpus):
        compute_importance(taxonomy, CostPolicy(), stop, [])
    with pytest.raises(ValueError):
        compute_importance(taxonomy, CostPolicy(), stop + move[:1], move)


def test_bootstrap(taxonomy, corpus):
    stop, move = corpus
    table = compute_importance(
        taxonomy, CostPolicy(), stop, move, n_bootstrap=20, seed=1)
    assert table.get(('car', EMPTY)).std == 0.0
    sources = stop + [ConceptAnnotation('s4', 'Stop', ['curtain'])]
    targets = move + [ConceptAnnotation('m4', 'Move', ['car', 'curtain'])]
    a = compute_importance(
        taxonomy, CostPolicy(), sources, targets, n_bootstrap=50, seed=1)
    b = compute_importance(
        taxonomy, CostPolicy(), sources, targets, n_bootstrap=50, seed=1)
    assert a == b
    assert a.get(('car', EMPTY)).std > 0


def test_table_document(table):
    assert table.class_pair == ('Stop', 'Move')
    assert table.score(('car', EMPTY)) == Fraction(-9, 10)
    assert table.get(('car', EMPTY)).std == 0.05
    assert table.get(('curtain', EMPTY)).std is None
    assert [e.pair for e in table.ranked()] == [
        ('car', EMPTY), ('curtain', EMPTY), ('bus', 'car')]
    out = io.StringIO()
    table.write(out)
    assert ImportanceTable.read(io.StringIO(out.getvalue())) == table


def test_table_format(table):
    text = table.format(top=2)
    lines = text.splitlines()
    assert lines[0] == (
        "Importance and standard deviation of the most prominent concept "
        "edits (Stop -> Move)")
    assert lines[2].startswith("delete car")
    assert "-0.90" in lines[2] and "0.05" in lines[2]
    assert lines[3].startswith("insert curtain")
    assert len(lines) == 5
    assert lines[-1] == "#Importance > 0: 2"


def test_order_global_example(table):
    E = EditSet(
        (Edit.delete('car'), Edit.insert('curtain'),
         Edit.substitute('sky', 'tree')), 0, 's', 't')
    expected = [
        Edit.delete('car'), Edit.insert('curtain'),
        Edit.substitute('sky', 'tree')]
    assert order_global(E, table) == expected
    assert order_local_global(E, table) == expected
    assert order_global(reversed(expected), table) == expected


def test_order_absent_pairs():
    edits = [Edit.substitute('sky', 'tree'), Edit.insert('pole'),
             Edit.delete('car')]
    assert order_global(edits, ImportanceTable()) == sorted(edits)


def test_order_contradicted_edits(table):
    """Edits contradicted by their score rank after agreeing ones"""
    edits = [Edit.insert('car'), Edit.delete('curtain'),
             Edit.insert('curtain'), Edit.insert('window')]
    assert order_global(edits, table) == [
        Edit.insert('curtain'), Edit.delete('curtain'), Edit.insert('car'),
        Edit.insert('window')]


def test_order_scale_invariance(table):
    scaled = ImportanceTable(
        [ImportanceEntry(e.pair, 3 * e.insert_count, 3 * e.delete_count,
                         3 * e.sub_forward, 3 * e.sub_backward)
         for e in table.entries.values()], table.class_pair)
    edits = [Edit.substitute('bus', 'car'), Edit.insert('car'),
             Edit.insert('curtain'), Edit.delete('car'), Edit.delete('pole')]
    ordered = order_global(edits, table)
    assert order_global(edits, scaled) == ordered
    assert sorted(ordered) == sorted(edits)


def test_ranked_table_edits(taxonomy, table):
    edits = ranked_table_edits(table, taxonomy, CostPolicy())
    assert edits == [Edit.delete('car', 2), Edit.insert('curtain', 2)]
    policy = CostPolicy.from_strings(['delete:car'])
    assert ranked_table_edits(table, taxonomy, policy) == [
        Edit.insert('curtain', 2)]


def test_is_applicable():
    current = scene('car', 'tree')
    assert is_applicable(Edit.delete('car'), current)
    assert not is_applicable(Edit.delete('bus'), current)
    assert is_applicable(Edit.substitute('tree', 'pole'), current)
    assert is_applicable(Edit.insert('curtain'), current)
    assert not is_applicable(Edit.insert('tree'), current)
    assert is_applicable(Edit.insert('tree'), current, planned=True)
    assert not is_applicable(Edit.delete('bus'), current, planned=True)


def test_next_edit_global(table):
    table_edits = [Edit.delete('car', 2), Edit.insert('curtain', 2)]
    remaining = [Edit.delete('car', 2), Edit.substitute('tree', 'pole', 4)]
    edit, selection = next_edit_global(
        table_edits, remaining, scene('car', 'tree'), table)
    assert (edit, selection) == (Edit.delete('car', 2), 'table')
    assert remaining == [Edit.substitute('tree', 'pole', 4)]
    edit, selection = next_edit_global(
        table_edits, remaining, scene('tree'), table)
    assert (edit, selection) == (Edit.insert('curtain', 2), 'table')
    assert len(remaining) == 1
    edit, selection = next_edit_global(
        table_edits, remaining, scene('curtain', 'tree'), table)
    assert (edit, selection) == (Edit.substitute('tree', 'pole', 4), 'plan')
    assert remaining == []
    assert next_edit_global(
        table_edits, remaining, scene('curtain', 'pole'), table) == (
            None, 'exhausted')


def test_next_edit_global_repeated_insertion(table):
    """A planned insertion of a concept already in the scene still applies"""
    remaining = [Edit.insert('car', 2)]
    edit, selection = next_edit_global([], remaining, scene('car'), table)
    assert (edit, selection) == (Edit.insert('car', 2), 'plan')
    assert remaining == []
    remaining = [Edit.insert('car', 2)]
    edit, selection = next_edit_global(
        [Edit.insert('car', 2)], remaining, scene('car', 'tree'), table)
    assert (edit, selection) == (Edit.insert('car', 2), 'table')
    assert remaining == []
    assert next_edit_global(
        [Edit.insert('car', 2)], [], scene('car'), table) == (
            None, 'exhausted')


def test_local_edit_lists():
    remaining = [Edit.insert('window'), Edit.delete('lamp'),
                 Edit.substitute('couch', 'bed'),
                 Edit.substitute('chair', 'stool'), Edit.insert('curtain')]
    add_list, remove_list = local_edit_lists(remaining)
    assert add_list == ['stool', 'bed', 'curtain', 'window']
    assert remove_list == ['chair', 'couch', 'lamp']


def test_next_edit_local():
    remaining = [Edit.substitute('couch', 'bed'), Edit.insert('curtain'),
                 Edit.delete('lamp')]
    selector = ScriptedSelector(script=[
        '["replace", "couch", "bed"]',
        '["add", "curtain", "window"]',
        'not a list',
        '["remove", "chair", "floor"]',
    ])
    edit = next_edit_local(selector, 'sha256:0', remaining, ['couch', 'lamp'])
    assert edit == Edit.substitute('couch', 'bed')
    prompt = selector.requests[0].prompt
    assert prompt.endswith(
        "Object list: [couch, lamp]\nAdd list: [bed, curtain]\n"
        "Remove list: [couch, lamp]\nStep:")
    assert selector.requests[0].image == 'sha256:0'
    edit = next_edit_local(selector, 'sha256:0', remaining)
    assert edit == Edit.insert('curtain')
    assert edit.anchor == 'window'
    with pytest.raises(UnparsableResponse):
        next_edit_local(selector, 'sha256:0', remaining)
    with pytest.raises(UnknownEdit):
        next_edit_local(selector, 'sha256:0', remaining)
    with pytest.raises(ValueError):
        next_edit_local(selector, 'sha256:0', [])


def test_select_local_edit_retries():
    remaining = [Edit.insert('curtain'), Edit.delete('lamp')]
    selector = ScriptedSelector(script=['nonsense', '["remove", "lamp", "floor"]'])
    edit, selection = select_local_edit(selector, 'sha256:0', remaining)
    assert (edit, selection) == (Edit.delete('lamp'), 'selector')
    assert edit.anchor == 'floor'
    assert len(selector.requests) == 2


def test_select_local_edit_fallback(caplog):
    remaining = [Edit.insert('curtain'), Edit.delete('lamp')]
    selector = ScriptedSelector(script=['nonsense', '[]', '["add", "x", "y"]'])
    edit, selection = select_local_edit(
        selector, 'sha256:0', remaining, attempts=3)
    assert (edit, selection) == (Edit.delete('lamp'), 'fallback')
    assert "falling back to delete lamp" in caplog.text


def test_hand_counted_table(testdir, taxonomy):
    """Closest targets: s1 -> m1 (delete car), s2 -> m2 (delete car and
    insert curtain, which sorts before substituting car by curtain at equal
    cost; m3 ties with m2 and loses on the image id), s3 -> m3 (car by bus)"""
    corpus = load_corpus(os.path.join(testdir, 'hand_count.jsonl'), taxonomy)
    stop = [a for a in corpus if a.label == 'Stop']
    move = [a for a in corpus if a.label == 'Move']
    table = compute_importance(taxonomy, CostPolicy(), stop, move)
    assert table.entries == {
        ('car', EMPTY): ImportanceEntry(('car', EMPTY), delete_count=2),
        ('curtain', EMPTY): ImportanceEntry(('curtain', EMPTY), insert_count=1),
        ('bus', 'car'): ImportanceEntry(('bus', 'car'), sub_backward=1),
    }
    assert table.score(('car', EMPTY)) == -1
    assert table.score(('curtain', EMPTY)) == 1
    assert table.score(('bus', 'car')) == -1
    assert table.n_nonzero() == 3
    assert [e.endorsed_edit() for e in table.ranked()] == [
        Edit.substitute('car', 'bus'), Edit.delete('car'),
        Edit.insert('curtain')]
