"""Wire documents exchanged with the classifier, grounder, inpainter and
selector services

Every document is a frozen dataclass that validates itself on construction
and converts to and from a plain dict (``to_dict`` / ``from_dict``) and JSON
text (``to_json`` / ``from_json``). Optional fields that are unset are left
out of the serialized form.
"""
import json
import math
from dataclasses import dataclass, field, fields
from typing import Dict, Optional, Tuple

from ._types import ImageRef, Label
from .exceptions import SchemaError

__all__ = [
    'GROUNDING_DEFAULTS',
    'INPAINTING_DEFAULTS',
    'WireDocument',
    'ClassifierRequest',
    'ClassifierResponse',
    'GrounderRequest',
    'GrounderResponse',
    'InpainterRequest',
    'InpainterResponse',
    'SelectorRequest',
    'SelectorResponse',
]

#: Grounding parameters of the generation setup this package reproduces
GROUNDING_DEFAULTS = {
    'confidence_threshold': 0.3,
    'box_expand_px': 35,
    'mask_blur_px': 10,
}

#: Inpainting parameters of the generation setup this package reproduces
INPAINTING_DEFAULTS = {
    'guidance_scale': 10.0,
    'denoise': 1.0,
    'steps': 40,
    'sampler': 'DPM++ 2M SDE',
    'hires_fix': False,
}


def _is_number(value):
    return (isinstance(value, (int, float)) and not isinstance(value, bool)
            and math.isfinite(value))


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _require(condition, cls, message, *args):
    if not condition:
        raise SchemaError("%s: %s" % (cls.__name__, message % args))


def _non_empty_str(cls, name, value):
    _require(isinstance(value, str) and value != '', cls,
             "%s must be a non-empty string, not %r", name, value)


class WireDocument:
    """Common serialization of the wire documents"""

    #: Fields converted between tuples (in Python) and lists (on the wire)
    _sequences = ()

    def to_dict(self) -> dict:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None and f.default is None:
                continue
            if f.name in self._sequences:
                value = [list(v) if isinstance(v, tuple) else v
                         for v in value]
            elif isinstance(value, dict):
                value = dict(value)
            data[f.name] = value
        return data

    @classmethod
    def from_dict(cls, data) -> 'WireDocument':
        if not isinstance(data, dict):
            raise SchemaError(
                "%s: expected an object, got %s"
                % (cls.__name__, type(data).__name__))
        names = {f.name for f in fields(cls)}
        unknown = set(data).difference(names)
        if unknown:
            raise SchemaError(
                "%s: unknown fields %s" % (cls.__name__, sorted(unknown)))
        kwargs = {}
        for (name, value) in data.items():
            if name in cls._sequences:
                _require(isinstance(value, list), cls,
                         "%s must be a list", name)
                value = tuple(
                    tuple(v) if isinstance(v, list) else v for v in value)
            kwargs[name] = value
        try:
            return cls(**kwargs)
        except TypeError as exc_info:
            raise SchemaError("%s: %s" % (cls.__name__, exc_info))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> 'WireDocument':
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc_info:
            raise SchemaError("%s: invalid JSON: %s" % (cls.__name__, exc_info))
        return cls.from_dict(data)


@dataclass(frozen=True)
class ClassifierRequest(WireDocument):
    """Request to classify `image` into one of `labels`

    `prompt` is used by language-vision classifiers and ignored by
    conventional ones.
    """
    image: ImageRef
    labels: Tuple[Label, ...]
    prompt: Optional[str] = None

    _sequences = ('labels',)

    def __post_init__(self):
        cls = type(self)
        _non_empty_str(cls, 'image', self.image)
        object.__setattr__(self, 'labels', tuple(self.labels))
        _require(len(self.labels) >= 2, cls, "at least two labels required")
        for label in self.labels:
            _non_empty_str(cls, 'label', label)
        _require(len(set(self.labels)) == len(self.labels), cls,
                 "labels must be distinct")
        _require(self.prompt is None or isinstance(self.prompt, str), cls,
                 "prompt must be a string")


@dataclass(frozen=True)
class ClassifierResponse(WireDocument):
    """Either a free-text `label` or per-label `scores` in [0, 1]"""
    label: Optional[str] = None
    scores: Optional[Dict[Label, float]] = None

    def __post_init__(self):
        cls = type(self)
        _require((self.label is None) != (self.scores is None), cls,
                 "exactly one of label and scores must be given")
        if self.label is not None:
            _require(isinstance(self.label, str), cls,
                     "label must be a string")
        else:
            _require(isinstance(self.scores, dict) and len(self.scores) > 0,
                     cls, "scores must be a non-empty mapping")
            for (label, score) in self.scores.items():
                _non_empty_str(cls, 'label', label)
                _require(_is_number(score) and 0 <= score <= 1, cls,
                         "score of %r must be in [0, 1]", label)

    def top_label(self, labels) -> Optional[Label]:
        """Highest-scoring element of `labels` (first one on ties)"""
        if self.scores is None:
            return None
        best = None
        for label in labels:
            score = self.scores.get(label)
            if score is not None and (best is None or score > best[0]):
                best = (score, label)
        return None if best is None else best[1]


@dataclass(frozen=True)
class GrounderRequest(WireDocument):
    """Request for a mask covering `query` in `image`"""
    image: ImageRef
    query: str
    confidence_threshold: float = GROUNDING_DEFAULTS['confidence_threshold']
    box_expand_px: int = GROUNDING_DEFAULTS['box_expand_px']
    mask_blur_px: int = GROUNDING_DEFAULTS['mask_blur_px']

    def __post_init__(self):
        cls = type(self)
        _non_empty_str(cls, 'image', self.image)
        _non_empty_str(cls, 'query', self.query)
        _require(_is_number(self.confidence_threshold)
                 and 0 <= self.confidence_threshold <= 1, cls,
                 "confidence_threshold must be in [0, 1]")
        _require(_is_int(self.box_expand_px) and self.box_expand_px >= 0, cls,
                 "box_expand_px must be a non-negative integer")
        _require(_is_int(self.mask_blur_px) and self.mask_blur_px >= 0, cls,
                 "mask_blur_px must be a non-negative integer")


@dataclass(frozen=True)
class GrounderResponse(WireDocument):
    """Detected boxes ``(x0, y0, x1, y1)`` and a reference to the mask"""
    boxes: Tuple[Tuple[float, float, float, float], ...]
    mask: ImageRef

    _sequences = ('boxes',)

    def __post_init__(self):
        cls = type(self)
        object.__setattr__(
            self, 'boxes', tuple(tuple(box) for box in self.boxes))
        for box in self.boxes:
            _require(len(box) == 4 and all(_is_number(v) for v in box), cls,
                     "boxes must be quadruples of numbers, not %r", box)
        _non_empty_str(cls, 'mask', self.mask)


@dataclass(frozen=True)
class InpainterRequest(WireDocument):
    """Request to regenerate the `mask` region of `image` from `prompt`

    `edit` is an optional symbolic description of the intended edit
    (:meth:`conceptedit.editplan.Edit.to_dict`); servers that do not
    understand it ignore it. `hires_fix` is passed through to the server.
    """
    image: ImageRef
    mask: ImageRef
    prompt: str
    negative_prompt: str = ''
    guidance_scale: float = INPAINTING_DEFAULTS['guidance_scale']
    denoise: float = INPAINTING_DEFAULTS['denoise']
    steps: int = INPAINTING_DEFAULTS['steps']
    sampler: str = INPAINTING_DEFAULTS['sampler']
    seed: int = 0
    hires_fix: bool = INPAINTING_DEFAULTS['hires_fix']
    edit: Optional[dict] = None

    def __post_init__(self):
        cls = type(self)
        _non_empty_str(cls, 'image', self.image)
        _non_empty_str(cls, 'mask', self.mask)
        _non_empty_str(cls, 'prompt', self.prompt)
        _require(isinstance(self.negative_prompt, str), cls,
                 "negative_prompt must be a string")
        _require(_is_number(self.guidance_scale) and self.guidance_scale > 0,
                 cls, "guidance_scale must be positive")
        _require(_is_number(self.denoise) and 0 <= self.denoise <= 1, cls,
                 "denoise must be in [0, 1]")
        _require(_is_int(self.steps) and self.steps >= 1, cls,
                 "steps must be a positive integer")
        _non_empty_str(cls, 'sampler', self.sampler)
        _require(_is_int(self.seed), cls, "seed must be an integer")
        _require(isinstance(self.hires_fix, bool), cls,
                 "hires_fix must be a boolean")
        _require(self.edit is None or isinstance(self.edit, dict), cls,
                 "edit must be an object")


@dataclass(frozen=True)
class InpainterResponse(WireDocument):
    image: ImageRef

    def __post_init__(self):
        _non_empty_str(type(self), 'image', self.image)


@dataclass(frozen=True)
class SelectorRequest(WireDocument):
    """Free-text `prompt` about `image` for a language-vision model"""
    image: ImageRef
    prompt: str

    def __post_init__(self):
        cls = type(self)
        _non_empty_str(cls, 'image', self.image)
        _non_empty_str(cls, 'prompt', self.prompt)


@dataclass(frozen=True)
class SelectorResponse(WireDocument):
    text: str = field(default='')

    def __post_init__(self):
        _require(isinstance(self.text, str), type(self),
                 "text must be a string")
