"""Service clients: deterministic in-process mocks and remote HTTP clients

The mocks operate on symbolic images. A :class:`SceneStore` maps image
references to :class:`~conceptedit.editplan.ConceptAnnotation` objects: the
:class:`MockEditor` derives a new annotation for every inpainted image, and the
:class:`MockClassifier` evaluates concept rules against it. All mocks speak
exactly the wire documents of :mod:`conceptedit.schemas` that the remote
clients exchange with real services.
"""
import base64
import hashlib
import json
import logging
import os
import re
import shutil
import threading
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass
from typing import FrozenSet, Optional, Sequence

import numpy as np

from ._types import ImageRef, Label
from .editplan import ConceptAnnotation, Edit, apply_edits
from .exceptions import (
    ClassifierUnavailable, GrounderUnavailable, InpainterUnavailable,
    MissingSource, ParseError, SchemaError, SelectorUnavailable)
from .prompts import FALLBACK_OBJECT
from .schemas import (
    ClassifierRequest, ClassifierResponse, GrounderRequest, GrounderResponse,
    InpainterRequest, InpainterResponse, SelectorRequest, SelectorResponse)
from .taxonomy import normalize_concept

__all__ = [
    'content_ref',
    'SceneStore',
    'ConceptRule',
    'MockClassifier',
    'mock_classify',
    'MockEditor',
    'ScriptedSelector',
    'mock_contracts',
    'FileImageStore',
    'HttpEndpoint',
    'RemoteClassifier',
    'RemoteGrounder',
    'RemoteInpainter',
    'RemoteSelector',
]

logger = logging.getLogger(__name__)


def content_ref(*parts) -> ImageRef:
    """Content-addressed reference for `parts`

    `parts` are either a single ``bytes`` object, or JSON-serializable values.

    >>> content_ref(b'abc')[:15]
    'sha256:ba7816bf'
    """
    if len(parts) == 1 and isinstance(parts[0], bytes):
        data = parts[0]
    else:
        data = json.dumps(parts, sort_keys=True).encode('utf-8')
    return 'sha256:' + hashlib.sha256(data).hexdigest()


class SceneStore:
    """Symbolic image store: image reference -> concept annotation"""

    def __init__(self):
        self._scenes = {}
        self._lock = threading.Lock()

    def __contains__(self, ref):
        return ref in self._scenes

    def __len__(self):
        return len(self._scenes)

    def register(self, annotation: ConceptAnnotation) -> ImageRef:
        """Store the source image `annotation`; return its reference"""
        ref = content_ref(
            'scene', annotation.image_id, list(annotation.concepts))
        self.put(ref, annotation)
        return ref

    def put(self, ref: ImageRef, annotation: ConceptAnnotation):
        with self._lock:
            self._scenes[ref] = annotation

    def get(self, ref: ImageRef) -> ConceptAnnotation:
        try:
            return self._scenes[ref]
        except KeyError:
            raise SchemaError("Unknown image reference %r" % ref)


@dataclass(frozen=True)
class ConceptRule:
    """Concept-presence predicate that implies a label

    The rule matches an annotation if all `present` concepts occur in it and
    none of the `absent` concepts do. A rule without conditions matches
    everything.
    """
    label: Label
    present: FrozenSet[str] = frozenset()
    absent: FrozenSet[str] = frozenset()

    def matches(self, annotation: ConceptAnnotation) -> bool:
        concepts = set(annotation.concepts)
        return (self.present.issubset(concepts)
                and concepts.isdisjoint(self.absent))

    @classmethod
    def parse(cls, text: str) -> 'ConceptRule':
        """Parse a rule ``"<condition> -> <label>"``

        The condition is a ``&``-separated list of concepts, each optionally
        negated with ``!``, or ``*`` for the default rule.

        >>> rule = ConceptRule.parse('car & !bus -> Stop')
        >>> sorted(rule.present), sorted(rule.absent), rule.label
        (['car'], ['bus'], 'Stop')
        """
        if '->' not in text:
            raise ParseError("Rule %r lacks '->'" % text)
        condition, label = (part.strip() for part in text.rsplit('->', 1))
        if not label:
            raise ParseError("Rule %r lacks a label" % text)
        present, absent = set(), set()
        if condition != '*':
            for term in condition.split('&'):
                term = term.strip()
                negated = term.startswith('!')
                concept = term.lstrip('!').strip()
                if not concept:
                    raise ParseError("Empty concept in rule %r" % text)
                if negated:
                    absent.add(normalize_concept(concept))
                else:
                    present.add(normalize_concept(concept))
        if present.intersection(absent):
            raise ParseError("Rule %r can never match" % text)
        return cls(label, frozenset(present), frozenset(absent))

    def to_string(self) -> str:
        terms = sorted(self.present) + ['!' + c for c in sorted(self.absent)]
        return "%s -> %s" % (" & ".join(terms) or '*', self.label)


class MockClassifier:
    """Rule-based classifier of symbolic images

    Args:
        rules: :class:`ConceptRule` instances or rule strings; the first
            matching rule decides. The last rule must be a default rule.
        store: the :class:`SceneStore` resolving image references
        noise: probability of replacing the label by a uniformly random one
        seed: seed of the noise
        scores: if True, answer with one-hot `scores` instead of a `label`
    """

    def __init__(self, rules, store: Optional[SceneStore] = None,
                 noise=0.0, seed=0, scores=False):
        self.rules = tuple(
            ConceptRule.parse(r) if isinstance(r, str) else r for r in rules)
        if not self.rules or (self.rules[-1].present
                              or self.rules[-1].absent):
            raise ValueError("The last classifier rule must be a default '*'")
        if not 0 <= noise <= 1:
            raise ValueError("noise must be in [0, 1]")
        self.store = SceneStore() if store is None else store
        self.noise = noise
        self.seed = seed
        self.scores = scores
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    @property
    def labels(self):
        return sorted({rule.label for rule in self.rules})

    def predict(self, annotation: ConceptAnnotation) -> Label:
        """Noise-free label of `annotation`"""
        for rule in self.rules:
            if rule.matches(annotation):
                return rule.label
        raise AssertionError("default rule did not match")  # pragma: no cover

    def classify(self, request: ClassifierRequest) -> ClassifierResponse:
        annotation = self.store.get(request.image)
        label = mock_classify(self, annotation, request.labels)
        if self.scores:
            return ClassifierResponse(scores={
                candidate: (1.0 if candidate == label else 0.0)
                for candidate in request.labels})
        return ClassifierResponse(label=label)


def mock_classify(classifier: MockClassifier, annotation: ConceptAnnotation,
                  labels: Optional[Sequence[Label]] = None) -> Label:
    """Label of `annotation` under `classifier`, including noise

    With ``noise > 0`` the label is replaced with probability `noise` by one
    drawn uniformly from `labels` (default: the labels of the rules), using
    the classifier's seeded generator.
    """
    label = classifier.predict(annotation)
    if classifier.noise > 0:
        choices = list(labels) if labels else classifier.labels
        with classifier._lock:
            if classifier._rng.random() < classifier.noise:
                label = choices[int(classifier._rng.integers(len(choices)))]
    return label


class MockEditor:
    """Grounder and inpainter for symbolic images

    Inpainting applies the request's symbolic `edit` to the annotation of the
    input image. With probability `failure_rate` the edit "fails" visually
    and the annotation stays unchanged; the output image still gets a new
    reference, derived from the input reference, the edit and the seed.
    """

    def __init__(self, store: SceneStore, failure_rate=0.0, seed=0):
        if not 0 <= failure_rate <= 1:
            raise ValueError("failure_rate must be in [0, 1]")
        self.store = store
        self.failure_rate = failure_rate
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def ground(self, request: GrounderRequest) -> GrounderResponse:
        annotation = self.store.get(request.image)
        query = normalize_concept(request.query)
        n = annotation.multiset[query]
        boxes = tuple(
            (64.0 * i, 0.0, 64.0 * (i + 1), 64.0) for i in range(n))
        mask = content_ref(
            'mask', request.image, query, request.confidence_threshold,
            request.box_expand_px, request.mask_blur_px)
        return GrounderResponse(boxes, mask)

    def inpaint(self, request: InpainterRequest) -> InpainterResponse:
        annotation = self.store.get(request.image)
        ref = content_ref(request.image, request.edit, self.seed)
        result = annotation
        if request.edit is not None:
            edit = Edit.from_dict(request.edit)
            failed = False
            if self.failure_rate > 0:
                with self._lock:
                    failed = bool(self._rng.random() < self.failure_rate)
            if failed:
                logger.debug("Mock edit %s failed", edit.describe())
            else:
                try:
                    result = apply_edits(annotation, [edit])
                except MissingSource as exc_info:
                    logger.debug("Mock edit had no effect: %s", exc_info)
        self.store.put(ref, result)
        return InpainterResponse(ref)


_LIST_LINE = r'^%s: \[(.*)\]$'
_OBJECT_LINE = r'^%s: "(.*)"$'


def _last_list(name, prompt):
    found = re.findall(_LIST_LINE % name, prompt, flags=re.MULTILINE)
    if not found:
        return None
    items = [item.strip() for item in found[-1].split(',')]
    return [item for item in items if item]


def _last_object(name, prompt):
    found = re.findall(_OBJECT_LINE % name, prompt, flags=re.MULTILINE)
    return found[-1] if found else None


class ScriptedSelector:
    """Edit selector answering from a script or a fixed heuristic

    Args:
        script: canned response texts, used first, in order
        preference: order of preferred actions once the script is used up,
            a permutation of 'substitute', 'delete', 'insert'
        deprioritize: concepts whose edits are proposed last
        anchors: answers for add-anchor prompts, by added object
        backdrops: answers for remove-backdrop prompts, by removed object

    When the same local-edit prompt arrives repeatedly (because the previous
    answer was rejected), the heuristic proposes its next candidate step.
    """

    ACTIONS = ('substitute', 'delete', 'insert')

    def __init__(self, script=(), preference=ACTIONS, deprioritize=(),
                 anchors=None, backdrops=None):
        if sorted(preference) != sorted(self.ACTIONS):
            raise ValueError(
                "preference must be a permutation of %s" % (self.ACTIONS,))
        self.script = deque(script)
        self.preference = tuple(preference)
        self.deprioritize = frozenset(
            normalize_concept(c) for c in deprioritize)
        self.anchors = dict(anchors or {})
        self.backdrops = dict(backdrops or {})
        self.requests = []
        self._last_prompt = None
        self._repeats = 0
        self._lock = threading.Lock()

    def select(self, request: SelectorRequest) -> SelectorResponse:
        with self._lock:
            self.requests.append(request)
            if self.script:
                return SelectorResponse(self.script.popleft())
            return SelectorResponse(self._heuristic(request.prompt))

    def _heuristic(self, prompt):
        removed = _last_list('Remove list', prompt)
        added = _last_list('Add list', prompt)
        if removed is not None and added is not None:
            if prompt == self._last_prompt:
                self._repeats += 1
            else:
                self._last_prompt, self._repeats = prompt, 0
            steps = self._candidate_steps(added, removed)
            if not steps:
                return ''
            return json.dumps(steps[self._repeats % len(steps)])
        obj = _last_object('Add', prompt)
        if obj is not None:
            return '"%s"' % self.anchors.get(obj, FALLBACK_OBJECT)
        obj = _last_object('Remove', prompt)
        if obj is not None:
            return '"%s"' % self.backdrops.get(obj, FALLBACK_OBJECT)
        return ''

    def _candidate_steps(self, added, removed):
        by_action = {
            'substitute': [
                ['replace', removed[i], added[i]]
                for i in range(min(len(added), len(removed)))],
            'delete': [
                ['remove', r, self.backdrops.get(r, FALLBACK_OBJECT)]
                for r in removed],
            'insert': [
                ['add', a, self.anchors.get(a, FALLBACK_OBJECT)]
                for a in added],
        }
        steps = []
        for action in self.preference:
            steps.extend(by_action[action])
        # sorted() is stable: preference order holds within both groups
        return sorted(steps, key=lambda step: bool(
            self.deprioritize.intersection(step[1:3])))


def mock_contracts(rules, seed=0, noise=0.0, failure_rate=0.0,
                   selector=None, scores=False):
    """Mock :class:`~conceptedit.pipeline.ServiceContracts` on one store

    Args:
        rules: classifier rules (see :class:`MockClassifier`)
        seed: seed of the classifier noise and the editor failures
        noise: classifier noise
        failure_rate: editor failure rate
        selector: selector client (default: a heuristic
            :class:`ScriptedSelector`)
        scores: whether the classifier answers with scores
    """
    from .pipeline import ServiceContracts
    seeds = np.random.SeedSequence(seed).generate_state(2)
    store = SceneStore()
    classifier = MockClassifier(
        rules, store, noise=noise, seed=int(seeds[0]), scores=scores)
    editor = MockEditor(store, failure_rate=failure_rate, seed=int(seeds[1]))
    if selector is None:
        selector = ScriptedSelector()
    return ServiceContracts(
        classifier=classifier, grounder=editor, inpainter=editor,
        selector=selector, images=store)


class FileImageStore:
    """Content-addressed image files in `directory`

    References are ``sha256:<hex>`` of the file bytes; the file lives at
    ``<directory>/<hex><suffix>``.
    """

    def __init__(self, directory, suffix='.png'):
        self.directory = str(directory)
        self.suffix = suffix
        os.makedirs(self.directory, exist_ok=True)

    def path(self, ref: ImageRef) -> str:
        if not ref.startswith('sha256:'):
            raise SchemaError("Not a content reference: %r" % ref)
        return os.path.join(self.directory, ref[7:] + self.suffix)

    def put(self, data: bytes) -> ImageRef:
        ref = content_ref(data)
        path = self.path(ref)
        if not os.path.isfile(path):
            with open(path, 'wb') as out_fh:
                out_fh.write(data)
        return ref

    def add_file(self, filename) -> ImageRef:
        with open(filename, 'rb') as in_fh:
            data = in_fh.read()
        ref = content_ref(data)
        path = self.path(ref)
        if not os.path.isfile(path):
            shutil.copyfile(filename, path)
        return ref

    def register(self, annotation: ConceptAnnotation) -> ImageRef:
        """Store the image file of `annotation`"""
        if annotation.image is None:
            raise SchemaError(
                "Annotation %s has no image file" % annotation.image_id)
        return self.add_file(annotation.image)

    def encode(self, ref: ImageRef, transport='path') -> str:
        """Image field value for the wire (`transport` 'path' or 'base64')"""
        if transport == 'path':
            return os.path.abspath(self.path(ref))
        elif transport == 'base64':
            with open(self.path(ref), 'rb') as in_fh:
                return 'base64:' + base64.b64encode(in_fh.read()).decode()
        raise ValueError("Unknown image transport %r" % transport)

    def decode(self, value: str) -> ImageRef:
        """Reference for an image field value received from a service"""
        if value.startswith('base64:'):
            return self.put(base64.b64decode(value[7:]))
        return self.add_file(value)


class HttpEndpoint:
    """JSON-over-HTTP POST endpoint with concurrency and rate caps

    Args:
        url: endpoint URL
        token: optional bearer token
        timeout: seconds per request
        max_concurrency: maximum number of requests in flight
        max_rate: maximum requests per second (None for no limit)
    """

    def __init__(self, url, token=None, timeout=60.0, max_concurrency=4,
                 max_rate=None):
        self.url = url
        self.token = token
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._interval = 0.0 if not max_rate else 1.0 / max_rate
        self._next_slot = 0.0
        self._rate_lock = threading.Lock()

    def _wait_for_rate(self):
        if self._interval <= 0:
            return
        with self._rate_lock:
            now = time.monotonic()
            start = max(now, self._next_slot)
            self._next_slot = start + self._interval
        if start > now:
            time.sleep(start - now)

    def post(self, document: dict, error=SchemaError) -> dict:
        """POST `document`, return the decoded answer

        Transport failures are raised as `error`.
        """
        headers = {'Content-Type': 'application/json'}
        if self.token:
            headers['Authorization'] = 'Bearer %s' % self.token
        request = urllib.request.Request(
            self.url, data=json.dumps(document).encode('utf-8'),
            headers=headers, method='POST')
        with self._slots:
            self._wait_for_rate()
            try:
                with urllib.request.urlopen(
                        request, timeout=self.timeout) as response:
                    return json.load(response)
            except (urllib.error.URLError, OSError, ValueError) as exc_info:
                raise error("%s: %s" % (self.url, exc_info))


class _RemoteClient:

    error = SchemaError

    def __init__(self, endpoint: HttpEndpoint, images: FileImageStore,
                 transport='path'):
        self.endpoint = endpoint
        self.images = images
        self.transport = transport

    def _post(self, document):
        logger.debug("POST %s", self.endpoint.url)
        return self.endpoint.post(document, error=self.error)


class RemoteClassifier(_RemoteClient):
    error = ClassifierUnavailable

    def classify(self, request: ClassifierRequest) -> ClassifierResponse:
        document = request.to_dict()
        document['image'] = self.images.encode(request.image, self.transport)
        return ClassifierResponse.from_dict(self._post(document))


class RemoteGrounder(_RemoteClient):
    error = GrounderUnavailable

    def ground(self, request: GrounderRequest) -> GrounderResponse:
        document = request.to_dict()
        document['image'] = self.images.encode(request.image, self.transport)
        answer = GrounderResponse.from_dict(self._post(document))
        return GrounderResponse(answer.boxes, self.images.decode(answer.mask))


class RemoteInpainter(_RemoteClient):
    error = InpainterUnavailable

    def inpaint(self, request: InpainterRequest) -> InpainterResponse:
        document = request.to_dict()
        document['image'] = self.images.encode(request.image, self.transport)
        document['mask'] = self.images.encode(request.mask, self.transport)
        answer = InpainterResponse.from_dict(self._post(document))
        return InpainterResponse(self.images.decode(answer.image))


class RemoteSelector(_RemoteClient):
    error = SelectorUnavailable

    def select(self, request: SelectorRequest) -> SelectorResponse:
        document = request.to_dict()
        document['image'] = self.images.encode(request.image, self.transport)
        return SelectorResponse.from_dict(self._post(document))
