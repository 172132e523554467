"""Prompt templates for language-vision services and parsers for their answers
"""
import re
import string
from typing import Optional, Sequence, Tuple

from .exceptions import UnparsableResponse

__all__ = [
    'DRIVING_CLASSIFICATION_PROMPT',
    'SCENE_CLASSIFICATION_PROMPT',
    'LOCAL_EDIT_PROMPT',
    'ADD_ANCHOR_PROMPT',
    'REMOVE_BACKDROP_PROMPT',
    'DEFAULT_NEGATIVE_PROMPT',
    'FALLBACK_OBJECT',
    'classification_prompt',
    'local_edit_prompt',
    'add_anchor_prompt',
    'remove_backdrop_prompt',
    'format_object_list',
    'normalize_text',
    'normalize_label',
    'match_label',
    'parse_selector_step',
    'parse_single_object',
]

DRIVING_CLASSIFICATION_PROMPT = (
    "Classify each image in their appropriate class according to the "
    "driving situation they depict.\n"
    "Valid class labels are {str_categories} and only these, depending on "
    "whether the car has to move or stop based on its surroundings.\n"
    "You need to classify the images in one of these classes.\n"
    "Pay attention to the semantics that define each class.\n"
    "Return me only the label of the scene depicted and nothing else.")

SCENE_CLASSIFICATION_PROMPT = (
    "Classify each image in their appropriate class according to the scene "
    "they depict.\n"
    "Valid classes are {str_categories} and only these, so you need to "
    "classify the images in one of these classes.\n"
    "Pay attention to the semantics that define each class.\n"
    "Return me only the label of the scene depicted and nothing else.")

LOCAL_EDIT_PROMPT = (
    "I want to remove some objects and add others. I would like you to find "
    "the best possible edit for the image, but I want only a single edit.\n"
    "You can choose from the following options:\n"
    "- Add an object from the \"Add\" list. In this case please give the "
    "answer in the format: [\"add\", \"added_object\", \"target where the "
    "added object will appear in front of\"]. Avoid positional description "
    "such as \"over\", \"next to\", \"above\" etc.\n"
    "- Remove an object from the \"Remove\" list. In this case please give "
    "the answer in the format: [\"remove\", \"removed_object\", \"the object "
    "that is behind the object when it is removed e.g. wall, floor, "
    "background\"].\n"
    "- Replace an object from the \"Remove\" list with one from the \"Add\" "
    "list. In this case please give the answer in the format: [\"replace\", "
    "\"removed_object\", \"added_object\"].\n"
    "So, you need to decide whether to add, remove, or replace an object.\n"
    "For example:\n"
    "Object list: [couch, lamp, window]\n"
    "Add list: [bed, curtain, blanket]\n"
    "Remove list: [lamp, couch]\n"
    "\n"
    "Step: Replace couch with bed.\n"
    "\n"
    "Another valid step might be:\n"
    "Step: [\"add\", \"curtain\", \"window\"].\n"
    "\n"
    "However, the step [\"add\", \"blanket\", \"couch\"] is not a logical "
    "step because the couch is on the remove list. If we put the blanket on "
    "the couch, we would still have to remove the couch and thus the blanket "
    "as well.\n"
    "\n"
    "Please respond with only a single step and make the most logical edit "
    "you can based on the image I have provided.\n"
    "\n"
    "Object list: {objects}\n"
    "Add list: {added_objs}\n"
    "Remove list: {removed_objs}\n"
    "Step:")

ADD_ANCHOR_PROMPT = (
    "I want to add an object in the image. Please specify what is the object "
    "that is target where the added object will appear in front of. Avoid "
    "positional description such as \"over\", \"next to\", \"above\" etc. "
    "Please respond with a single item, without any additional text. I want "
    "to parse this answer automatically, so it is crucial to return only a "
    "single object without any explanation, or additional text!\n"
    "\n"
    "For example:\n"
    "\n"
    "Add: \"painting\"\n"
    "Answer: \"wall\"\n"
    "\n"
    "Add: \"pillow\"\n"
    "Answer: \"bed\"\n"
    "\n"
    "Add: \"{obj}\"\n"
    "Answer:")

REMOVE_BACKDROP_PROMPT = (
    "I want to remove an object from the image. Please specify what is the "
    "object that is behind the object when it is removed e.g. wall, floor, "
    "background. Please respond with a single item, without any additional "
    "text. I want to parse this answer automatically, so it is crucial to "
    "return only a single object without any explanation, or additional "
    "text!\n"
    "\n"
    "For example:\n"
    "Remove: \"painting\"\n"
    "Answer: \"wall\"\n"
    "\n"
    "Remove: \"pillow\"\n"
    "Answer: \"bed\"\n"
    "\n"
    "Remove: \"{obj}\"\n"
    "Answer:")

#: Negative prompt of the inpainter unless configured otherwise (not taken
#: from any published setup)
DEFAULT_NEGATIVE_PROMPT = (
    "blurry, distorted, deformed, low quality, watermark, text")

#: Anchor or backdrop used when the selector gives no usable answer
FALLBACK_OBJECT = 'background'

_CLASSIFICATION_PROMPTS = {
    'driving': DRIVING_CLASSIFICATION_PROMPT,
    'scene': SCENE_CLASSIFICATION_PROMPT,
}

_VERB_SYNONYMS = {
    'add': 'add',
    'insert': 'add',
    'remove': 'remove',
    'delete': 'remove',
    'replace': 'replace',
    'substitute': 'replace',
}

_REPLACE_SENTENCE = re.compile(r'^replace\s+(.+?)\s+with\s+(.+)$')

_QUOTES = str.maketrans({
    '“': '"', '”': '"', '‘': "'", '’': "'", '`': "'"})


def format_object_list(objects: Sequence[str]) -> str:
    """Render `objects` the way the prompt examples do

    >>> format_object_list(['couch', 'lamp', 'window'])
    '[couch, lamp, window]'
    """
    return "[%s]" % ", ".join(objects)


def classification_prompt(labels: Sequence[str], style='scene') -> str:
    """Classification prompt for `labels` in the given `style`

    Args:
        labels: the valid class labels
        style: 'driving' or 'scene'
    """
    try:
        template = _CLASSIFICATION_PROMPTS[style]
    except KeyError:
        raise ValueError(
            "Unknown prompt style %r, expected one of %s"
            % (style, sorted(_CLASSIFICATION_PROMPTS)))
    str_categories = ", ".join("'%s'" % label for label in labels)
    return template.format(str_categories=str_categories)


def local_edit_prompt(objects, added_objs, removed_objs) -> str:
    return LOCAL_EDIT_PROMPT.format(
        objects=format_object_list(objects),
        added_objs=format_object_list(added_objs),
        removed_objs=format_object_list(removed_objs))


def add_anchor_prompt(obj: str) -> str:
    return ADD_ANCHOR_PROMPT.format(obj=obj)


def remove_backdrop_prompt(obj: str) -> str:
    return REMOVE_BACKDROP_PROMPT.format(obj=obj)


def normalize_text(text: str) -> str:
    """Straighten typographic quotes, trim and lowercase"""
    return str(text).translate(_QUOTES).strip().lower()


def normalize_label(text: str) -> str:
    """Normalize a classifier answer for matching against labels

    >>> normalize_label('  Stop. ')
    'stop'
    >>> normalize_label('"Living Room"')
    'living room'
    """
    text = normalize_text(text)
    text = text.translate(str.maketrans('', '', string.punctuation))
    return " ".join(text.split())


def match_label(text: str, labels: Sequence[str]) -> Optional[str]:
    """The element of `labels` that `text` names, or None

    >>> match_label('move!', ['Stop', 'Move'])
    'Move'
    >>> match_label('I think it is Stop', ['Stop', 'Move']) is None
    True
    """
    answer = normalize_label(text)
    for label in labels:
        if normalize_label(label) == answer:
            return label
    return None


def _strip_answer(text):
    text = normalize_text(text)
    for prefix in ('step:', 'answer:'):
        if text.startswith(prefix):
            text = text[len(prefix):].strip()
    return text.rstrip('.').strip()


def parse_selector_step(text: str) -> Tuple[str, str, str]:
    """Parse a local-edit answer into ``(verb, first, second)``

    `verb` is one of 'add', 'remove', 'replace'. Accepted are bracketed
    triples and the sentence form "Replace X with Y".

    Raises:
        UnparsableResponse: for anything else

    Example:
        >>> parse_selector_step('["add", "curtain", "window"]')
        ('add', 'curtain', 'window')
        >>> parse_selector_step('Step: Replace couch with bed.')
        ('replace', 'couch', 'bed')
    """
    answer = _strip_answer(text)
    if not answer:
        raise UnparsableResponse("Empty selector response")
    if answer.startswith('[') and answer.endswith(']'):
        inner = answer[1:-1]
        if '[' in inner or ']' in inner:
            raise UnparsableResponse("Nested list in %r" % text)
        items = [item.strip().strip('"\'').strip() for item in inner.split(',')]
        if len(items) != 3 or not all(items):
            raise UnparsableResponse(
                "Expected a triple of non-empty items in %r" % text)
        verb, first, second = items
        if verb not in _VERB_SYNONYMS:
            raise UnparsableResponse("Unknown action %r in %r" % (verb, text))
        return _VERB_SYNONYMS[verb], first, second
    match = _REPLACE_SENTENCE.match(answer)
    if match:
        first, second = (
            group.strip().strip('"\'').strip() for group in match.groups())
        if first and second:
            return 'replace', first, second
    raise UnparsableResponse("Cannot parse selector step %r" % text)


def parse_single_object(text: str, max_words: int = 3) -> str:
    """Parse an answer that must name exactly one object

    Raises:
        UnparsableResponse: if the answer is empty, spans several lines,
            has more than `max_words` words or contains sentence punctuation

    Example:
        >>> parse_single_object('Answer: "bed"')
        'bed'
    """
    answer = _strip_answer(text).strip('"\'').strip()
    if not answer or '\n' in answer:
        raise UnparsableResponse("Expected a single object, got %r" % text)
    if len(answer.split()) > max_words or re.search(r'[,;:!?"]', answer):
        raise UnparsableResponse("Expected a single object, got %r" % text)
    return answer
