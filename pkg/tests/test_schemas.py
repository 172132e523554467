"""Tests for the wire documents of the service interfaces"""
import json
import os

import pytest

from conceptedit.exceptions import SchemaError
from conceptedit.schemas import (
    ClassifierRequest, ClassifierResponse, GrounderRequest, GrounderResponse,
    InpainterRequest, InpainterResponse, SelectorRequest, SelectorResponse)


@pytest.fixture
def testdir(request):
    return os.path.splitext(request.module.__file__)[0]


def read_golden(testdir, name):
    with open(os.path.join(testdir, name), encoding='utf-8') as in_fh:
        return json.load(in_fh)


def test_defaults_on_the_wire(testdir):
    """Requests with default parameters match the stored documents"""
    request = GrounderRequest('sha256:0a1b', 'traffic light')
    assert request.to_dict() == read_golden(testdir, 'grounder_request.json')
    request = InpainterRequest('sha256:0a1b', 'sha256:2c3d', 'bed')
    assert request.to_dict() == read_golden(testdir, 'inpainter_request.json')
    assert 'edit' not in request.to_dict()
    request = ClassifierRequest('sha256:0a1b', ['Stop', 'Move'])
    assert request.to_dict() == read_golden(
        testdir, 'classifier_request.json')


def test_read_golden_documents(testdir):
    data = read_golden(testdir, 'inpainter_request.json')
    request = InpainterRequest.from_dict(data)
    assert request.steps == 40
    assert request.sampler == 'DPM++ 2M SDE'
    assert request.edit is None
    request = ClassifierRequest.from_dict(
        read_golden(testdir, 'classifier_request.json'))
    assert request.labels == ('Stop', 'Move')
    assert request.prompt is None


def test_json_round_trip():
    documents = [
        ClassifierRequest('img', ('Bedroom', 'Living room'), prompt='Which?'),
        ClassifierResponse(scores={'Bedroom': 0.25, 'Living room': 0.75}),
        GrounderResponse([(0, 0, 64.5, 64)], 'mask'),
        InpainterRequest(
            'img', 'mask', 'bed', 'blurry', seed=7, hires_fix=True,
            edit={'kind': 'insert', 'target': 'bed'}),
        SelectorResponse('["add", "bed", "wall"]'),
    ]
    for document in documents:
        text = document.to_json()
        assert type(document).from_json(text) == document
        assert json.loads(text) == document.to_dict()
    assert GrounderResponse([(0, 0, 64.5, 64)], 'mask').to_dict() == {
        'boxes': [[0, 0, 64.5, 64]], 'mask': 'mask'}


@pytest.mark.parametrize('cls, data', [
    (ClassifierRequest, {'image': 'img', 'labels': ['Stop']}),
    (ClassifierRequest, {'image': 'img', 'labels': ['Stop', 'Stop']}),
    (ClassifierRequest, {'image': '', 'labels': ['Stop', 'Move']}),
    (ClassifierRequest, {'image': 'img', 'labels': 'Stop,Move'}),
    (ClassifierRequest, {'labels': ['Stop', 'Move']}),
    (ClassifierResponse, {}),
    (ClassifierResponse, {'label': 'Stop', 'scores': {'Stop': 1.0}}),
    (ClassifierResponse, {'scores': {}}),
    (ClassifierResponse, {'scores': {'Stop': 1.5}}),
    (ClassifierResponse, {'label': 3}),
    (GrounderRequest, {'image': 'img', 'query': 'car',
                       'confidence_threshold': 1.2}),
    (GrounderRequest, {'image': 'img', 'query': 'car',
                       'box_expand_px': 3.5}),
    (GrounderRequest, {'image': 'img', 'query': 'car', 'mask_blur_px': -1}),
    (GrounderRequest, {'image': 'img', 'query': 'car', 'color': 'red'}),
    (GrounderResponse, {'boxes': [[0, 0, 1]], 'mask': 'mask'}),
    (InpainterRequest, {'image': 'img', 'mask': 'm', 'prompt': 'bed',
                        'steps': True}),
    (InpainterRequest, {'image': 'img', 'mask': 'm', 'prompt': 'bed',
                        'guidance_scale': float('nan')}),
    (InpainterRequest, {'image': 'img', 'mask': 'm', 'prompt': 'bed',
                        'denoise': 2}),
    (InpainterRequest, {'image': 'img', 'mask': 'm', 'prompt': ''}),
    (InpainterRequest, {'image': 'img', 'mask': 'm', 'prompt': 'bed',
                        'edit': 'insert bed'}),
    (InpainterResponse, {'image': None}),
    (SelectorRequest, {'image': 'img', 'prompt': ''}),
    (SelectorResponse, {'text': ['add']}),
])
def test_invalid_documents(cls, data):
    with pytest.raises(SchemaError):
        cls.from_dict(data)


def test_invalid_json():
    with pytest.raises(SchemaError, match="invalid JSON"):
        SelectorResponse.from_json('{"text": ')
    with pytest.raises(SchemaError, match="expected an object"):
        SelectorResponse.from_json('["text"]')


def test_top_label():
    response = ClassifierResponse(
        scores={'Move': 0.5, 'Stop': 0.5, 'Yield': 0.9})
    assert response.top_label(['Stop', 'Move']) == 'Stop'
    assert response.top_label(['Move', 'Stop']) == 'Move'
    assert response.top_label(['Park', 'Turn']) is None
    assert ClassifierResponse(label='Stop').top_label(['Stop']) is None
