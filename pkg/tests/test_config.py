"""Tests for the YAML project configuration"""
import os
from dataclasses import replace

import pytest
import yaml

from conceptedit.backends import (
    FileImageStore, MockClassifier, RemoteClassifier, ScriptedSelector)
from conceptedit.config import MockSettings, ProjectConfig
from conceptedit.exceptions import ConfigError
from conceptedit.ordering import OrderingStrategy
from conceptedit.taxonomy import EditKind, INFINITE_COST


@pytest.fixture
def testdir(request):
    return os.path.splitext(request.module.__file__)[0]


@pytest.fixture
def config(testdir):
    return ProjectConfig.load(os.path.join(testdir, 'project.yml'))


@pytest.fixture
def data(testdir):
    with open(os.path.join(testdir, 'project.yml')) as in_fh:
        return yaml.safe_load(in_fh)


def test_load(testdir, config):
    assert config.taxonomy == os.path.join(testdir, 'taxonomy.txt')
    assert config.corpus == os.path.join(testdir, 'corpus.jsonl')
    assert config.output_dir == os.path.join(testdir, 'output')
    assert config.class_pair == ('Stop', 'Move')
    assert (config.source_label, config.target_label) == ('Stop', 'Move')
    assert config.mock.rules == ('car -> Stop', '* -> Move')
    assert config.mock.anchors == {'pillow': 'bed'}
    assert config.remote.image_dir == os.path.join(testdir, 'images')
    config.validate()


def test_defaults():
    config = ProjectConfig()
    assert config.strategy == 'local-global'
    assert config.consistency_runs == 7
    assert config.grounding == {
        'confidence_threshold': 0.3, 'box_expand_px': 35, 'mask_blur_px': 10}
    assert config.inpainting['sampler'] == 'DPM++ 2M SDE'
    assert config.mock == MockSettings()


def test_run_config(config):
    run_config = config.run_config()
    assert run_config.strategy is OrderingStrategy.GLOBAL
    assert run_config.consistency_runs == 5
    assert run_config.seed == 42
    assert run_config.max_steps == 4
    assert run_config.prompt_style == 'driving'
    assert run_config.box_expand_px == 20
    assert run_config.confidence_threshold == 0.3
    assert (run_config.steps, run_config.hires_fix) == (25, True)
    assert run_config.guidance_scale == 10.0


def test_cost_policy(config):
    taxonomy = config.load_taxonomy()
    policy = config.cost_policy()
    assert policy.edit_cost(
        taxonomy, EditKind.DELETE, 'pole') is INFINITE_COST
    assert policy.edit_cost(
        taxonomy, EditKind.SUBSTITUTE, 'car', 'bus') is INFINITE_COST
    assert policy.edit_cost(taxonomy, EditKind.SUBSTITUTE, 'bus', 'car') == 2


def test_load_corpora(testdir, config):
    corpus, sources, targets = config.load_corpora(config.load_taxonomy())
    assert len(corpus) == 4
    assert [a.image_id for a in sources] == ['s1', 's2']
    assert [a.image_id for a in targets] == ['m1']
    assert sources[0].image == os.path.join(testdir, 'images', 's1.png')
    assert sources[1].image == '/data/street/s2.png'
    assert targets[0].image is None


def test_with_overrides(config):
    changed = config.with_overrides(strategy='local', seed=None, jobs=3)
    assert changed.strategy == 'local'
    assert changed.seed == 42
    assert changed.jobs == 3
    assert config.strategy == 'global'


@pytest.mark.parametrize('changes', [
    {'class_pair': ['Stop']},
    {'class_pair': ['Stop', 'Stop']},
    {'strategy': 'random'},
    {'consistency_runs': 4},
    {'seed': -1},
    {'max_steps': 0},
    {'jobs': 0},
    {'n_bootstrap': -5},
    {'prompt_style': 'haiku'},
    {'nonactionable': ['remove:car']},
    {'backend': 'cloud'},
    {'mock': {'rules': []}},
    {'mock': {'rules': ['car -> Stop']}},
    {'mock': {'rules': ['car Stop', '* -> Move']}},
    {'mock': {'rules': ['* -> Move'], 'noise': 2}},
    {'mock': {'rules': ['* -> Move'], 'selector_preference': ['delete']}},
    {'backend': 'remote'},
    {'taxonomy': 'missing.txt'},
    {'importance_table': 'missing.tsv'},
    {'retries': 0},
    {'candidate_limit': 0},
])
def test_invalid(testdir, data, changes):
    data.update(changes)
    with pytest.raises(ConfigError):
        ProjectConfig.from_dict(data, base_dir=testdir).validate()


@pytest.mark.parametrize('data, message', [
    ({'colour': 'red'}, "Unknown configuration keys"),
    ({'mock': {'rule': []}}, "Unknown keys in section 'mock'"),
    ({'grounding': {'threshold': 0.5}}, "Unknown keys in section"),
    ({'mock': ['car -> Stop']}, "must be a mapping"),
    (['taxonomy.txt'], "must be a mapping"),
])
def test_invalid_structure(data, message):
    with pytest.raises(ConfigError, match=message):
        ProjectConfig.from_dict(data)


def test_invalid_files(tmpdir):
    with pytest.raises(ConfigError, match="Cannot read"):
        ProjectConfig.load(str(tmpdir.join('missing.yml')))
    broken = tmpdir.join('broken.yml')
    broken.write("taxonomy: [unclosed\n")
    with pytest.raises(ConfigError, match="Invalid YAML"):
        ProjectConfig.load(str(broken))
    empty = tmpdir.join('empty.yml')
    empty.write("")
    assert ProjectConfig.load(str(empty)).taxonomy is None


def test_mock_contracts(config):
    contracts = config.make_contracts(seed=3)
    assert isinstance(contracts.classifier, MockClassifier)
    assert isinstance(contracts.selector, ScriptedSelector)
    assert contracts.selector.preference == ('delete', 'insert', 'substitute')
    assert contracts.selector.deprioritize == frozenset(['car'])
    assert contracts.selector.anchors == {'pillow': 'bed'}
    assert contracts.classifier.store is contracts.images
    other = config.make_contracts(seed=3)
    assert other.images is not contracts.images


def test_remote_contracts(testdir, tmpdir, monkeypatch):
    monkeypatch.setenv('CONCEPTEDIT_TOKEN', 'secret')
    config = ProjectConfig.load(os.path.join(testdir, 'remote.yml'))
    assert config.remote.image_dir == os.path.join(testdir, 'cache')
    config = replace(
        config, remote=replace(config.remote, image_dir=str(tmpdir)))
    config.validate()
    contracts = config.make_contracts(seed=0)
    assert isinstance(contracts.classifier, RemoteClassifier)
    assert isinstance(contracts.images, FileImageStore)
    assert contracts.selector is None
    assert contracts.classifier.transport == 'base64'
    endpoint = contracts.classifier.endpoint
    assert endpoint.url == 'http://localhost:8001/classify'
    assert endpoint.token == 'secret'
    assert config.make_contracts(seed=1).classifier.endpoint is endpoint
    with pytest.raises(ConfigError, match="remote.selector"):
        replace(config, strategy='local').validate()
