"""The iterative counterfactual loop

A run plans the minimal edit set towards the closest image of the target
class, then executes it one edit at a time: the next edit is chosen by the
configured ordering strategy, the grounder masks the affected region, the
inpainter regenerates it, and the classifier (queried repeatedly, majority
vote) decides whether the label has flipped. The loop stops at the first flip
or when the edit set is exhausted.
"""
import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from ._types import ImageRef, Label
from .editplan import (
    ConceptAnnotation, Edit, EditSet, apply_edits, closest_target)
from .exceptions import (
    ClassifierUnavailable, ConfigError, GrounderUnavailable, Infeasible,
    InpainterUnavailable, MissingSource, ParseError, SchemaMismatch,
    SelectorUnavailable, ServiceUnavailable, SourceMisclassified,
    UnparsableResponse)
from .ordering import (
    ImportanceTable, OrderingStrategy, next_edit_global, order_global,
    order_local_global, ranked_table_edits, select_local_edit)
from .prompts import (
    DEFAULT_NEGATIVE_PROMPT, FALLBACK_OBJECT, add_anchor_prompt,
    classification_prompt, match_label, parse_single_object,
    remove_backdrop_prompt)
from .schemas import (
    GROUNDING_DEFAULTS, INPAINTING_DEFAULTS, ClassifierRequest,
    GrounderRequest, InpainterRequest, SelectorRequest)
from .taxonomy import CostPolicy, EditKind, Taxonomy

__all__ = [
    'TRACE_VERSION',
    'ServiceContracts',
    'RunConfig',
    'Verdict',
    'EditContext',
    'StepRecord',
    'RunTrace',
    'call_with_retries',
    'classify_consistent',
    'resolve_edit_context',
    'run_counterfactual',
    'run_batch',
    'run_seed',
    'write_traces',
    'read_traces',
]

logger = logging.getLogger(__name__)

#: Version of the serialized trace layout
TRACE_VERSION = 1

STATUSES = ('flipped', 'exhausted', 'misclassified', 'failed')


@dataclass
class ServiceContracts:
    """The services a run talks to

    Attributes:
        classifier: client with ``classify(ClassifierRequest)``
        grounder: client with ``ground(GrounderRequest)``
        inpainter: client with ``inpaint(InpainterRequest)``
        selector: client with ``select(SelectorRequest)``; required for the
            Local strategy, optional otherwise (anchors then fall back)
        images: image store with ``register(ConceptAnnotation)`` returning
            the reference of the source image
    """
    classifier: Any
    grounder: Any
    inpainter: Any
    selector: Any = None
    images: Any = None


@dataclass(frozen=True)
class RunConfig:
    """Parameters of a single counterfactual run"""
    strategy: OrderingStrategy = OrderingStrategy.LOCAL_GLOBAL
    consistency_runs: int = 7
    max_steps: Optional[int] = None
    seed: int = 0
    confidence_threshold: float = GROUNDING_DEFAULTS['confidence_threshold']
    box_expand_px: int = GROUNDING_DEFAULTS['box_expand_px']
    mask_blur_px: int = GROUNDING_DEFAULTS['mask_blur_px']
    guidance_scale: float = INPAINTING_DEFAULTS['guidance_scale']
    denoise: float = INPAINTING_DEFAULTS['denoise']
    steps: int = INPAINTING_DEFAULTS['steps']
    sampler: str = INPAINTING_DEFAULTS['sampler']
    hires_fix: bool = INPAINTING_DEFAULTS['hires_fix']
    negative_prompt: str = DEFAULT_NEGATIVE_PROMPT
    prompt_style: str = 'scene'
    retries: int = 3
    backoff: float = 0.5
    selector_retries: int = 3
    candidate_limit: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'strategy', OrderingStrategy(self.strategy))
        if self.consistency_runs < 1 or self.consistency_runs % 2 == 0:
            raise ConfigError(
                "consistency_runs must be odd and >= 1, not %r"
                % self.consistency_runs)
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.retries < 1 or self.selector_retries < 1:
            raise ConfigError("retries and selector_retries must be >= 1")
        if self.backoff < 0:
            raise ConfigError("backoff must be non-negative")
        if self.candidate_limit is not None and self.candidate_limit < 1:
            raise ConfigError("candidate_limit must be >= 1")
        if self.prompt_style not in ('driving', 'scene'):
            raise ConfigError(
                "Unknown prompt style %r" % (self.prompt_style,))


class Verdict:
    """Majority label of repeated classifications

    Attributes:
        label: majority label
        ambiguity: fraction of (non-abstaining) votes agreeing with the
            majority
        votes: one entry per classifier call: the matched label (None for an
            abstention) or, for classifiers returning scores, the scores
    """

    def __init__(self, label: Label, ambiguity: Fraction, votes: tuple):
        self.label = label
        self.ambiguity = ambiguity
        self.votes = votes

    def __iter__(self):
        return iter((self.label, self.ambiguity, self.votes))

    def __eq__(self, other):
        return tuple(self) == tuple(other)

    def __repr__(self):
        return "Verdict(%r, %s, %r)" % (self.label, self.ambiguity, self.votes)


@dataclass(frozen=True)
class EditContext:
    """What to mask and what to paint for one edit"""
    grounding_target: str
    prompt: str
    negative_prompt: str
    anchor: Optional[str] = None
    fallback: bool = False


@dataclass(frozen=True)
class StepRecord:
    """One executed edit and the classification of its result

    The step-0 record of the unedited source image has no `edit`. `error`
    notes an edit that did not apply to the tracked concept annotation.
    """
    index: int
    edit: Optional[Edit]
    image_ref: ImageRef
    verdict: Label
    votes: tuple
    ambiguity: Fraction
    selection: str = ''
    grounding_target: str = ''
    prompt: str = ''
    error: str = ''

    def to_dict(self):
        return {
            'index': self.index,
            'edit': None if self.edit is None else self.edit.to_dict(),
            'selection': self.selection,
            'grounding_target': self.grounding_target,
            'prompt': self.prompt,
            'error': self.error,
            'image_ref': self.image_ref,
            'verdict': self.verdict,
            'votes': list(self.votes),
            'ambiguity': str(self.ambiguity),
        }

    @classmethod
    def from_dict(cls, data):
        edit = data['edit']
        return cls(
            index=int(data['index']),
            edit=None if edit is None else Edit.from_dict(edit),
            image_ref=data['image_ref'], verdict=data['verdict'],
            votes=tuple(data['votes']),
            ambiguity=Fraction(data['ambiguity']),
            selection=data.get('selection', ''),
            grounding_target=data.get('grounding_target', ''),
            prompt=data.get('prompt', ''),
            error=data.get('error', ''))


@dataclass
class RunTrace:
    """Complete record of one counterfactual run

    `initial` is the step-0 classification of the unedited source image.
    """
    source: ConceptAnnotation
    target_image: Optional[str]
    edit_plan: Optional[EditSet]
    strategy: OrderingStrategy
    labels: Tuple[Label, Label]
    initial: Optional[StepRecord] = None
    steps: List[StepRecord] = field(default_factory=list)
    status: str = 'exhausted'
    error: Optional[str] = None
    failed_step: Optional[int] = None

    @property
    def flipped(self) -> bool:
        return self.status == 'flipped'

    @property
    def steps_to_flip(self) -> Optional[int]:
        if self.flipped:
            return self.steps[-1].index
        return None

    @property
    def vote_sets(self) -> List[tuple]:
        """Vote vectors of all classifications, step 0 included"""
        records = ([self.initial] if self.initial is not None else [])
        return [r.votes for r in records + self.steps]

    def to_dict(self):
        return {
            'trace_version': TRACE_VERSION,
            'image_id': self.source.image_id,
            'source': self.source.to_dict(),
            'labels': list(self.labels),
            'target_image': self.target_image,
            'edit_plan': (
                None if self.edit_plan is None else self.edit_plan.to_dict()),
            'strategy': self.strategy.value,
            'status': self.status,
            'flipped': self.flipped,
            'steps_to_flip': self.steps_to_flip,
            'error': self.error,
            'failed_step': self.failed_step,
            'initial': (
                None if self.initial is None else self.initial.to_dict()),
            'steps': [step.to_dict() for step in self.steps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data):
        try:
            if data['trace_version'] != TRACE_VERSION:
                raise SchemaMismatch(
                    "Unsupported trace_version %r" % data['trace_version'])
            if data['status'] not in STATUSES:
                raise SchemaMismatch("Unknown status %r" % data['status'])
            plan = data['edit_plan']
            initial = data['initial']
            return cls(
                source=ConceptAnnotation.from_dict(data['source']),
                target_image=data['target_image'],
                edit_plan=None if plan is None else EditSet.from_dict(plan),
                strategy=OrderingStrategy(data['strategy']),
                labels=tuple(data['labels']),
                initial=(
                    None if initial is None
                    else StepRecord.from_dict(initial)),
                steps=[StepRecord.from_dict(s) for s in data['steps']],
                status=data['status'], error=data['error'],
                failed_step=data['failed_step'])
        except (KeyError, TypeError, ValueError, ParseError) as exc_info:
            if isinstance(exc_info, SchemaMismatch):
                raise
            raise SchemaMismatch("Invalid trace record: %r" % (exc_info,))


def call_with_retries(func, *args, attempts=3, backoff=0.5,
                      error=ServiceUnavailable):
    """Call ``func(*args)``, retrying service failures

    Transport errors (:exc:`OSError`, :exc:`ServiceUnavailable`) are retried
    up to `attempts` times in total, sleeping ``backoff * 2**k`` seconds
    before retry ``k + 1``. After the last attempt, `error` is raised.
    """
    for attempt in range(attempts):
        try:
            return func(*args)
        except (OSError, ServiceUnavailable) as exc_info:
            logger.debug(
                "Attempt %d/%d of %s failed: %s", attempt + 1, attempts,
                getattr(func, '__qualname__', func), exc_info)
            last_error = exc_info
            if attempt + 1 < attempts and backoff > 0:
                time.sleep(backoff * 2 ** attempt)
    raise error("Giving up after %d attempts: %s" % (attempts, last_error))


def classify_consistent(
        classifier, image_ref: ImageRef, labels: Sequence[Label],
        runs: int = 7, prompt: Optional[str] = None, retries: int = 3,
        backoff: float = 0.0) -> Verdict:
    """Majority vote over `runs` classifications of `image_ref`

    Free-text answers are matched against `labels` after normalization;
    answers matching no label are abstentions, which are recorded but do not
    count towards the majority fraction. Ties (only possible with
    abstentions) go to the label listed first.

    Raises:
        ConfigError: if `runs` is not odd and positive
        ClassifierUnavailable: if a call fails after `retries` attempts, or
            if every vote abstains
    """
    if runs < 1 or runs % 2 == 0:
        raise ConfigError("runs must be odd and >= 1, not %r" % runs)
    labels = tuple(labels)
    request = ClassifierRequest(image_ref, labels, prompt)
    votes = []
    counts = Counter()
    for _ in range(runs):
        response = call_with_retries(
            classifier.classify, request, attempts=retries, backoff=backoff,
            error=ClassifierUnavailable)
        if response.scores is not None:
            label = response.top_label(labels)
            votes.append(dict(response.scores))
        else:
            label = match_label(response.label, labels)
            votes.append(label)
            if label is None:
                logger.debug("Abstention: %r", response.label)
        if label is not None:
            counts[label] += 1
    total = sum(counts.values())
    if total == 0:
        raise ClassifierUnavailable(
            "No classifier answer for %s matched %s" % (image_ref, labels))
    majority = max(counts.values())
    label = next(l for l in labels if counts[l] == majority)
    return Verdict(label, Fraction(majority, total), tuple(votes))


def _ask_object(selector, image_ref, prompt, what, config):
    if selector is None:
        return None
    response = call_with_retries(
        selector.select, SelectorRequest(image_ref, prompt),
        attempts=config.retries, backoff=config.backoff,
        error=SelectorUnavailable)
    try:
        return parse_single_object(response.text)
    except UnparsableResponse as exc_info:
        logger.warning(
            "Unusable %s answer (%s); using %r", what, exc_info,
            FALLBACK_OBJECT)
        return None


def resolve_edit_context(
        selector, image_ref: ImageRef, edit: Edit,
        config: Optional[RunConfig] = None) -> EditContext:
    """Grounding target and prompts for executing `edit`

    Insertions are painted in front of an anchor object and deletions reveal
    a backdrop object. Both are taken from the edit's own anchor if it has
    one, else asked from `selector`; without a usable answer they fall back
    to ``"background"``. Substitutions mask the source and paint the target.
    """
    if config is None:
        config = RunConfig()
    negative = config.negative_prompt
    if edit.kind is EditKind.SUBSTITUTE:
        return EditContext(
            edit.source, edit.target, _join_prompts(negative, edit.source))
    fallback = False
    anchor = edit.anchor
    if anchor is None:
        if edit.kind is EditKind.INSERT:
            prompt = add_anchor_prompt(edit.target)
            anchor = _ask_object(selector, image_ref, prompt, 'anchor', config)
        else:
            prompt = remove_backdrop_prompt(edit.source)
            anchor = _ask_object(
                selector, image_ref, prompt, 'backdrop', config)
        if anchor is None:
            anchor, fallback = FALLBACK_OBJECT, True
    if edit.kind is EditKind.INSERT:
        return EditContext(anchor, edit.target, negative, anchor, fallback)
    return EditContext(
        edit.source, anchor, _join_prompts(negative, edit.source), anchor,
        fallback)


def _join_prompts(*parts):
    return ", ".join(part for part in parts if part)


def _record(index, edit, image_ref, verdict, selection='', context=None,
            error=''):
    return StepRecord(
        index=index, edit=edit, image_ref=image_ref, verdict=verdict.label,
        votes=verdict.votes, ambiguity=verdict.ambiguity,
        selection=selection,
        grounding_target='' if context is None else context.grounding_target,
        prompt='' if context is None else context.prompt,
        error=error)


class _EditOrder:
    """Hands out the edits of one run according to the strategy"""

    def __init__(self, strategy, plan, table, t, policy, contracts, config):
        self.strategy = strategy
        self.contracts = contracts
        self.config = config
        self.table = table
        if strategy is OrderingStrategy.LOCAL:
            if contracts.selector is None:
                raise ConfigError("The local strategy requires a selector")
            self.remaining = list(plan.edits)
        else:
            if table is None:
                raise ConfigError(
                    "The %s strategy requires an importance table"
                    % strategy.value)
            if strategy is OrderingStrategy.GLOBAL:
                self.remaining = order_global(plan, table)
                self.table_edits = ranked_table_edits(table, t, policy)
            else:
                self.remaining = order_local_global(plan, table)

    def next(self, image_ref, scene):
        if self.strategy is OrderingStrategy.LOCAL:
            if not self.remaining:
                return None, 'exhausted'

            def call(func, *args):
                return call_with_retries(
                    func, *args, attempts=self.config.retries,
                    backoff=self.config.backoff, error=SelectorUnavailable)

            edit, selection = select_local_edit(
                self.contracts.selector, image_ref, self.remaining,
                scene.concepts, attempts=self.config.selector_retries,
                call=call)
            self.remaining.remove(edit)
            return edit, selection
        elif self.strategy is OrderingStrategy.GLOBAL:
            return next_edit_global(
                self.table_edits, self.remaining, scene, self.table)
        if not self.remaining:
            return None, 'exhausted'
        return self.remaining.pop(0), 'ranked'


def run_counterfactual(
        t: Taxonomy, policy: CostPolicy, src: ConceptAnnotation,
        candidates: Sequence[ConceptAnnotation], contracts: ServiceContracts,
        config: Optional[RunConfig] = None,
        table: Optional[ImportanceTable] = None) -> RunTrace:
    """Generate a counterfactual for `src` step by step

    Args:
        t: taxonomy
        policy: cost policy
        src: source annotation, of class L
        candidates: annotations of the target class L*
        contracts: service clients
        config: run parameters
        table: importance table, required for the Global and Local-Global
            strategies

    Returns:
        the complete trace. A source not classified as L at step 0 yields a
        trace with status ``'misclassified'``; a service failing beyond its
        retry budget yields status ``'failed'`` with the offending step.

    Raises:
        EmptyCandidates: if `candidates` is empty
        ConfigError: if the strategy lacks its selector or table
    """
    if config is None:
        config = RunConfig()
    try:
        target, plan = closest_target(
            t, policy, src, candidates,
            candidate_limit=config.candidate_limit)
    except Infeasible as exc_info:
        labels = (src.label, candidates[0].label)
        logger.warning("No edit plan for %s: %s", src.image_id, exc_info)
        return RunTrace(
            source=src, target_image=None, edit_plan=None,
            strategy=config.strategy, labels=labels, status='failed',
            error=str(exc_info), failed_step=0)
    labels = (src.label, target.label)
    order = _EditOrder(
        config.strategy, plan, table, t, policy, contracts, config)
    trace = RunTrace(
        source=src, target_image=target.image_id, edit_plan=plan,
        strategy=config.strategy, labels=labels)
    prompt = classification_prompt(labels, config.prompt_style)

    def classify(ref):
        return classify_consistent(
            contracts.classifier, ref, labels, config.consistency_runs,
            prompt=prompt, retries=config.retries, backoff=config.backoff)

    index = 0
    try:
        image_ref = contracts.images.register(src)
        verdict = classify(image_ref)
        trace.initial = _record(0, None, image_ref, verdict)
        if verdict.label != src.label:
            logger.warning(
                "%s is classified as %s, not %s; skipping",
                src.image_id, verdict.label, src.label)
            trace.status = 'misclassified'
            trace.error = str(SourceMisclassified(
                "%s classified as %s" % (src.image_id, verdict.label)))
            return trace
        budget = len(plan)
        if config.max_steps is not None:
            budget = min(budget, config.max_steps)
        scene = src
        while index < budget:
            index += 1
            edit, selection = order.next(image_ref, scene)
            if edit is None:
                index -= 1
                break
            context = resolve_edit_context(
                contracts.selector, image_ref, edit, config)
            logger.debug(
                "%s step %d: %s (%s)", src.image_id, index, edit.describe(),
                selection)
            grounding = call_with_retries(
                contracts.grounder.ground,
                GrounderRequest(
                    image_ref, context.grounding_target,
                    config.confidence_threshold, config.box_expand_px,
                    config.mask_blur_px),
                attempts=config.retries, backoff=config.backoff,
                error=GrounderUnavailable)
            painted = call_with_retries(
                contracts.inpainter.inpaint,
                InpainterRequest(
                    image_ref, grounding.mask, context.prompt,
                    context.negative_prompt, config.guidance_scale,
                    config.denoise, config.steps, config.sampler,
                    config.seed, config.hires_fix, edit.to_dict()),
                attempts=config.retries, backoff=config.backoff,
                error=InpainterUnavailable)
            image_ref = painted.image
            verdict = classify(image_ref)
            error = ''
            try:
                scene = apply_edits(scene, [edit])
            except MissingSource as exc_info:
                logger.warning(
                    "%s step %d: %s", src.image_id, index, exc_info)
                error = str(exc_info)
            trace.steps.append(_record(
                index, edit, image_ref, verdict, selection, context, error))
            if verdict.label == labels[1]:
                trace.status = 'flipped'
                break
    except ServiceUnavailable as exc_info:
        logger.warning(
            "Run for %s failed at step %d: %s", src.image_id, index,
            exc_info)
        trace.status = 'failed'
        trace.error = str(exc_info)
        trace.failed_step = index
    return trace


def run_seed(root_seed: int, image_id: str) -> int:
    """Seed of the run for `image_id`, independent of batch order"""
    sequence = np.random.SeedSequence(
        [root_seed] + list(image_id.encode('utf-8')))
    return int(sequence.generate_state(1)[0])


def run_batch(
        t: Taxonomy, policy: CostPolicy,
        sources: Sequence[ConceptAnnotation],
        candidates: Sequence[ConceptAnnotation], make_contracts,
        config: Optional[RunConfig] = None,
        table: Optional[ImportanceTable] = None,
        jobs: int = 1) -> List[RunTrace]:
    """Run :func:`run_counterfactual` for every source image

    Args:
        make_contracts: callable ``make_contracts(seed)`` returning fresh
            :class:`ServiceContracts` for one run
        jobs: number of concurrent runs

    Every run gets its own contracts and its own seed (see
    :func:`run_seed`), so the traces do not depend on `jobs`. They are
    returned sorted by image id.
    """
    if config is None:
        config = RunConfig()
    sources = sorted(sources, key=lambda a: a.image_id)

    def run(src):
        seed = run_seed(config.seed, src.image_id)
        run_config = replace(config, seed=seed)
        return run_counterfactual(
            t, policy, src, candidates, make_contracts(seed), run_config,
            table)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            traces = list(executor.map(run, sources))
    else:
        traces = [run(src) for src in sources]
    return traces


def write_traces(traces: Sequence[RunTrace], out_fh):
    """Write `traces`, one JSON record per line"""
    for trace in traces:
        out_fh.write(trace.to_json() + "\n")


def read_traces(source) -> List[RunTrace]:
    """Read traces written by :func:`write_traces`

    Raises:
        SchemaMismatch: for records of the wrong layout
    """
    if hasattr(source, 'read'):
        lines = source.read().splitlines()
    else:
        with open(source, encoding='utf-8') as in_fh:
            lines = in_fh.read().splitlines()
    traces = []
    for (lineno, line) in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc_info:
            raise SchemaMismatch("trace line %d: %s" % (lineno, exc_info))
        if not isinstance(data, dict):
            raise SchemaMismatch("trace line %d is not an object" % lineno)
        traces.append(RunTrace.from_dict(data))
    return traces
