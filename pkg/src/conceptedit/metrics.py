"""Evaluation of counterfactual runs

Trace metrics (success rate, number of edits, stability of repeated
classifications) are aggregated exactly as :class:`~fractions.Fraction`;
distribution metrics compare embedding sets supplied as files.
"""
import json
import logging
from collections import namedtuple
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import cdist, pdist

from .exceptions import (
    DegenerateCovariance, EmptyInput, LengthMismatch, SchemaMismatch,
    ZeroBandwidth, ZeroVector)
from .prec import DEFAULT_REPORT_PRECISION, EIGVAL_TOLERANCE, MAX_EMBEDDING_DIM

__all__ = [
    'EmbeddingSet',
    'load_embeddings',
    'write_embeddings',
    'counted_traces',
    'success_rate',
    'avg_edits',
    'avg_edits_all',
    'avg_plan_size',
    'stability',
    'ambiguity_trajectory',
    'frechet_distance',
    'MMDEstimate',
    'median_bandwidth',
    'mmd_estimate',
    'rbf_mmd',
    'mean_cosine',
    'SurveySummary',
    'survey_summary',
    'ReportRow',
    'build_report',
    'format_report',
]

logger = logging.getLogger(__name__)


class EmbeddingSet:
    """Equal-dimension real vectors from one encoder

    Args:
        vectors: array-like of shape ``(count, dim)``
        tag: provenance of the vectors (e.g. the encoder)
    """

    def __init__(self, vectors, tag=''):
        vectors = np.array(vectors, dtype=np.float64, ndmin=2)
        if vectors.ndim != 2 or vectors.shape[0] == 0 or vectors.shape[1] == 0:
            raise EmptyInput("An embedding set needs at least one vector")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("Embedding vectors must be finite")
        self.vectors = vectors
        self.tag = tag

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __repr__(self):
        return "EmbeddingSet(count=%d, dim=%d, tag=%r)" % (
            len(self), self.dim, self.tag)


def load_embeddings(source) -> EmbeddingSet:
    """Read an embedding file

    The first line is a JSON header ``{"dim": ..., "count": ..., "tag": ...}``,
    followed by `count` rows of `dim` whitespace-separated decimals.

    Raises:
        SchemaMismatch: if the file does not match its header
    """
    if hasattr(source, 'read'):
        lines = source.read().splitlines()
    else:
        with open(source, encoding='utf-8') as in_fh:
            lines = in_fh.read().splitlines()
    if not lines:
        raise SchemaMismatch("Empty embedding file")
    try:
        header = json.loads(lines[0])
        dim, count = int(header['dim']), int(header['count'])
        tag = str(header.get('tag', ''))
    except (ValueError, KeyError, TypeError) as exc_info:
        raise SchemaMismatch("Invalid embedding header: %s" % exc_info)
    rows = [line.split() for line in lines[1:] if line.strip()]
    if len(rows) != count:
        raise SchemaMismatch(
            "Header announces %d vectors, found %d" % (count, len(rows)))
    for (i, row) in enumerate(rows, start=1):
        if len(row) != dim:
            raise SchemaMismatch(
                "Vector %d has %d entries, expected %d" % (i, len(row), dim))
    try:
        vectors = np.array(rows, dtype=np.float64).reshape(count, dim)
    except ValueError as exc_info:
        raise SchemaMismatch("Invalid embedding value: %s" % exc_info)
    return EmbeddingSet(vectors, tag)


def write_embeddings(embeddings: EmbeddingSet, out_fh):
    """Write `embeddings` in the format read by :func:`load_embeddings`"""
    header = {
        'dim': embeddings.dim, 'count': len(embeddings),
        'tag': embeddings.tag}
    out_fh.write(json.dumps(header, sort_keys=True) + "\n")
    for vector in embeddings.vectors:
        out_fh.write(" ".join(repr(float(v)) for v in vector) + "\n")


def counted_traces(traces):
    """Traces that enter rate denominators (misclassified sources excluded)

    Raises:
        EmptyInput: if no trace is left
    """
    counted = [trace for trace in traces if trace.status != 'misclassified']
    if not counted:
        raise EmptyInput("No trace with a correctly classified source")
    return counted


def success_rate(traces) -> Fraction:
    """Fraction of runs that flipped the classifier

    Failed runs count as not flipped.
    """
    counted = counted_traces(traces)
    return Fraction(sum(1 for t in counted if t.flipped), len(counted))


def avg_edits(traces) -> Optional[Fraction]:
    """Mean number of executed edits over flipped runs (None if none)"""
    flipped = [t.steps_to_flip for t in counted_traces(traces) if t.flipped]
    if not flipped:
        return None
    return Fraction(sum(flipped), len(flipped))


def avg_edits_all(traces) -> Fraction:
    """Mean number of executed edits over all runs"""
    counted = counted_traces(traces)
    return Fraction(sum(len(t.steps) for t in counted), len(counted))


def avg_plan_size(traces) -> Fraction:
    """Mean size of the full edit plans"""
    plans = [
        len(t.edit_plan) for t in counted_traces(traces)
        if t.edit_plan is not None]
    if not plans:
        raise EmptyInput("No trace with an edit plan")
    return Fraction(sum(plans), len(plans))


def stability(vote_sets) -> Fraction:
    """Fraction of vote sets in which all runs gave the identical answer"""
    vote_sets = list(vote_sets)
    if not vote_sets:
        raise EmptyInput("No vote sets")
    stable = 0
    for votes in vote_sets:
        votes = list(votes)
        if all(vote == votes[0] for vote in votes):
            stable += 1
    return Fraction(stable, len(vote_sets))


def ambiguity_trajectory(traces) -> List[float]:
    """Mean majority fraction per step index (index 0 = unedited source)"""
    per_step = {}
    for trace in counted_traces(traces):
        records = ([trace.initial] if trace.initial is not None else [])
        for record in records + trace.steps:
            per_step.setdefault(record.index, []).append(
                float(record.ambiguity))
    return [float(np.mean(per_step[i])) for i in sorted(per_step)]


def _check_pair(a, b, minimum=2):
    if len(a) < minimum or len(b) < minimum:
        raise EmptyInput(
            "Need at least %d vectors per set, got %d and %d"
            % (minimum, len(a), len(b)))
    if a.dim != b.dim:
        raise LengthMismatch(
            "Dimension mismatch: %d vs %d" % (a.dim, b.dim))


def _sqrtm_psd(matrix, what):
    """Square root of a symmetric positive semi-definite matrix"""
    eigvals, eigvecs = eigh((matrix + matrix.T) / 2)
    limit = -EIGVAL_TOLERANCE * max(1.0, float(np.max(np.abs(eigvals))))
    if np.min(eigvals) < limit:
        raise DegenerateCovariance(
            "%s has eigenvalue %g below tolerance" % (what, np.min(eigvals)))
    eigvals = np.clip(eigvals, 0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T, eigvals


def frechet_distance(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """Fréchet distance between Gaussians fitted to `a` and `b`

    ``|μ_a - μ_b|² + Tr(Σ_a + Σ_b - 2 (Σ_a Σ_b)^½)`` with unbiased (n - 1)
    covariances. The trace of the matrix square root is evaluated through
    the eigenvalues of the symmetric matrix ``Σ_a^½ Σ_b Σ_a^½``.

    Example:
        >>> a = EmbeddingSet([[-1.0], [0.0], [1.0]])
        >>> b = EmbeddingSet([[0.0], [1.0], [2.0]])
        >>> round(frechet_distance(a, b), 10)
        1.0
    """
    _check_pair(a, b)
    if a.dim > MAX_EMBEDDING_DIM:
        raise ValueError(
            "Embedding dimension %d exceeds %d" % (a.dim, MAX_EMBEDDING_DIM))
    mu_a, mu_b = a.vectors.mean(axis=0), b.vectors.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a.vectors, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b.vectors, rowvar=False, ddof=1))
    sqrt_a, _ = _sqrtm_psd(cov_a, "covariance of %r" % a.tag)
    product = sqrt_a @ cov_b @ sqrt_a
    _, eigvals = _sqrtm_psd(product, "covariance product")
    diff = mu_a - mu_b
    distance = (diff @ diff + np.trace(cov_a) + np.trace(cov_b)
                - 2 * np.sum(np.sqrt(eigvals)))
    return float(max(distance, 0.0))


#: Result of :func:`mmd_estimate`: the (clamped) squared MMD, the kernel
#: bandwidth, whether a negative estimate was clamped, and the raw estimate
MMDEstimate = namedtuple(
    'MMDEstimate', ['value', 'bandwidth', 'clamped', 'raw'])


def median_bandwidth(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """Median pairwise distance of the pooled vectors"""
    pooled = np.vstack([a.vectors, b.vectors])
    return float(np.median(pdist(pooled)))


def mmd_estimate(a: EmbeddingSet, b: EmbeddingSet, bandwidth=None,
                 unbiased=True) -> MMDEstimate:
    """Squared maximum mean discrepancy with a Gaussian kernel

    ``k(x, y) = exp(-|x - y|² / (2 σ²))`` with ``σ = bandwidth``, by default
    the median pairwise distance of the pooled vectors. The unbiased estimator
    leaves out the diagonal self-similarities and can become negative; it is
    then clamped to zero (logged, and reported in the result).

    Raises:
        ZeroBandwidth: if the bandwidth is not positive
    """
    _check_pair(a, b)
    if bandwidth is None:
        bandwidth = median_bandwidth(a, b)
    if not bandwidth > 0:
        raise ZeroBandwidth("Kernel bandwidth must be positive")
    gamma = 1.0 / (2 * bandwidth ** 2)
    x, y = a.vectors, b.vectors
    k_xx = np.exp(-gamma * cdist(x, x, 'sqeuclidean'))
    k_yy = np.exp(-gamma * cdist(y, y, 'sqeuclidean'))
    k_xy = np.exp(-gamma * cdist(x, y, 'sqeuclidean'))
    m, n = len(x), len(y)
    if unbiased:
        term_xx = (np.sum(k_xx) - np.trace(k_xx)) / (m * (m - 1))
        term_yy = (np.sum(k_yy) - np.trace(k_yy)) / (n * (n - 1))
    else:
        term_xx = np.sum(k_xx) / m ** 2
        term_yy = np.sum(k_yy) / n ** 2
    raw = float(term_xx + term_yy - 2 * np.sum(k_xy) / (m * n))
    clamped = raw < 0
    if clamped:
        logger.warning("Clamping negative MMD estimate %g to zero", raw)
    return MMDEstimate(max(raw, 0.0), float(bandwidth), clamped, raw)


def rbf_mmd(a: EmbeddingSet, b: EmbeddingSet, bandwidth=None,
            unbiased=True) -> float:
    """Squared RBF-kernel MMD between `a` and `b` (see :func:`mmd_estimate`)
    """
    return mmd_estimate(a, b, bandwidth, unbiased).value


def mean_cosine(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """Mean cosine similarity of the aligned pairs ``(a[i], b[i])``

    Example:
        >>> a = EmbeddingSet([[1.0, 0.0], [1.0, 0.0]])
        >>> b = EmbeddingSet([[2.0, 0.0], [0.0, 3.0]])
        >>> mean_cosine(a, b)
        0.5
    """
    if len(a) != len(b):
        raise LengthMismatch(
            "Paired sets differ in length: %d vs %d" % (len(a), len(b)))
    if a.dim != b.dim:
        raise LengthMismatch(
            "Dimension mismatch: %d vs %d" % (a.dim, b.dim))
    norms_a = np.linalg.norm(a.vectors, axis=1)
    norms_b = np.linalg.norm(b.vectors, axis=1)
    if np.any(norms_a == 0) or np.any(norms_b == 0):
        raise ZeroVector("Cosine similarity of a zero vector")
    cosines = np.sum(a.vectors * b.vectors, axis=1) / (norms_a * norms_b)
    return float(np.mean(np.clip(cosines, -1.0, 1.0)))


@dataclass(frozen=True)
class SurveySummary:
    """Aggregated human judgments of generated counterfactuals

    Attributes:
        n_responses: number of responses
        avg_human_step: mean step at which humans saw the label flip, over
            responses that saw a flip
        visually_correct_rate: fraction of responses judging the edits
            visually correct
        mean_step_gap: mean of (model flip step - human flip step) over
            images flipped for both
    """
    n_responses: int
    avg_human_step: Optional[Fraction]
    visually_correct_rate: Fraction
    mean_step_gap: Optional[Fraction]


def survey_summary(responses, traces=()) -> SurveySummary:
    """Aggregate survey `responses`

    Args:
        responses: mappings ``{'image_id', 'flip_step', 'visually_correct'}``
            with `flip_step` None if the respondent saw no flip
        traces: the runs the survey was about, to compare flip steps
    """
    responses = list(responses)
    if not responses:
        raise EmptyInput("No survey responses")
    steps = [r['flip_step'] for r in responses if r['flip_step'] is not None]
    correct = sum(1 for r in responses if r['visually_correct'])
    model_steps = {
        t.source.image_id: t.steps_to_flip for t in traces if t.flipped}
    gaps = [
        model_steps[r['image_id']] - r['flip_step'] for r in responses
        if r['flip_step'] is not None and r['image_id'] in model_steps]
    return SurveySummary(
        n_responses=len(responses),
        avg_human_step=(
            Fraction(sum(steps), len(steps)) if steps else None),
        visually_correct_rate=Fraction(correct, len(responses)),
        mean_step_gap=Fraction(sum(gaps), len(gaps)) if gaps else None)


@dataclass(frozen=True)
class ReportRow:
    """Evaluation summary of one classifier/strategy combination"""
    classifier_tag: str
    strategy: str
    fid: Optional[float]
    cmmd: Optional[float]
    s3: Optional[float]
    success_rate: Fraction
    avg_edits: Optional[Fraction]
    stability: Fraction
    avg_edits_all: Fraction = Fraction(0)
    avg_plan_size: Optional[Fraction] = None
    n_runs: int = 0
    n_misclassified: int = 0
    n_failed: int = 0

    def to_dict(self, precision=DEFAULT_REPORT_PRECISION):
        data = {}
        for (name, value) in vars(self).items():
            if isinstance(value, (Fraction, float)):
                value = round(float(value), precision)
            data[name] = value
        return data


def build_report(traces, classifier_tag='', embeddings=None
                 ) -> List[ReportRow]:
    """One :class:`ReportRow` per strategy occurring in `traces`

    Args:
        traces: run traces
        classifier_tag: name of the classifier the traces were produced with
        embeddings: optional pair ``(sources, counterfactuals)`` of
            :class:`EmbeddingSet`; if given, FID, CMMD and the mean cosine
            similarity of the aligned pairs are reported
    """
    traces = list(traces)
    if not traces:
        raise EmptyInput("No traces")
    fid = cmmd = s3 = None
    if embeddings is not None:
        sources, counterfactuals = embeddings
        fid = frechet_distance(sources, counterfactuals)
        cmmd = rbf_mmd(sources, counterfactuals)
        s3 = mean_cosine(sources, counterfactuals)
    rows = []
    for strategy in sorted({t.strategy.value for t in traces}):
        group = [t for t in traces if t.strategy.value == strategy]
        counted = counted_traces(group)
        with_plan = [t for t in counted if t.edit_plan is not None]
        rows.append(ReportRow(
            classifier_tag=classifier_tag, strategy=strategy, fid=fid,
            cmmd=cmmd, s3=s3, success_rate=success_rate(group),
            avg_edits=avg_edits(group),
            stability=stability(
                votes for t in counted for votes in t.vote_sets),
            avg_edits_all=avg_edits_all(group),
            avg_plan_size=avg_plan_size(group) if with_plan else None,
            n_runs=len(group),
            n_misclassified=len(group) - len(counted),
            n_failed=sum(1 for t in group if t.status == 'failed')))
    return rows


_COLUMNS = [
    ('classifier_tag', 'classifier', '%-12s'),
    ('strategy', 'strategy', '%-13s'),
    ('fid', 'FID', '%10s'),
    ('cmmd', 'CMMD', '%10s'),
    ('s3', 'S3', '%8s'),
    ('success_rate', 'SR', '%8s'),
    ('avg_edits', 'Avg|E|', '%8s'),
    ('avg_edits_all', 'Avg|E|all', '%10s'),
    ('avg_plan_size', 'plan|E|', '%8s'),
    ('stability', 'stability', '%10s'),
    ('n_runs', 'runs', '%6s'),
    ('n_misclassified', 'miscl.', '%7s'),
    ('n_failed', 'failed', '%7s'),
]


def format_report(rows: Sequence[ReportRow],
                  precision=DEFAULT_REPORT_PRECISION) -> str:
    """Aligned text table of `rows`"""

    def cell(value):
        if value is None:
            return '-'
        elif isinstance(value, (Fraction, float)):
            return "%.*f" % (precision, float(value))
        return str(value)

    lines = [" ".join(fmt % title for (_, title, fmt) in _COLUMNS)]
    for row in rows:
        lines.append(" ".join(
            fmt % cell(getattr(row, name)) for (name, _, fmt) in _COLUMNS))
    return "\n".join(lines)
