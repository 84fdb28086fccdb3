"""Multi-reference scoring strategies: max, avg, and six-pass agg.

max and avg score the hypothesis against each reference separately and
take the maximum or mean. agg runs six passes that permute the source
and the two references through the input slots and returns the mean
discounted by the spread, mu * (1 - sigma).
"""

from __future__ import annotations

import math
from typing import Sequence

from .evalset import EvalSet, ScoreTable
from .scorer import ScoreRequest

STRATEGIES = ("max", "avg", "agg")


def _per_ref_requests(src: str, hyp: str, refs: Sequence[str]) -> list[ScoreRequest]:
    if not refs:
        raise ValueError("multi-reference scoring needs at least one reference")
    return [ScoreRequest(src, hyp, ref) for ref in refs]


def _agg_requests(src: str, hyp: str, ref: str, altref: str) -> list[ScoreRequest]:
    # the six (source, reference) arrangements, in fixed order
    return [
        ScoreRequest(src, hyp, ref),
        ScoreRequest(ref, hyp, src),
        ScoreRequest(src, hyp, altref),
        ScoreRequest(altref, hyp, src),
        ScoreRequest(ref, hyp, altref),
        ScoreRequest(altref, hyp, ref),
    ]


def _combine_agg(scores: Sequence[float]) -> float:
    if max(scores) == min(scores):
        # zero spread: mu * (1 - 0) is the common value, exactly
        return scores[0]
    mu = math.fsum(scores) / len(scores)
    variance = math.fsum((s - mu) ** 2 for s in scores) / len(scores)
    return mu * (1.0 - math.sqrt(variance))


def multiref_max(backend, src: str, hyp: str, refs: Sequence[str]) -> float:
    """Maximum over per-reference scores."""
    return max(backend.score_batch(_per_ref_requests(src, hyp, refs)))


def multiref_avg(backend, src: str, hyp: str, refs: Sequence[str]) -> float:
    """Arithmetic mean over per-reference scores."""
    scores = backend.score_batch(_per_ref_requests(src, hyp, refs))
    return math.fsum(scores) / len(scores)


def multiref_agg(backend, src: str, hyp: str, ref: str, altref: str | None) -> float:
    """Six-pass aggregate over two references.

    Scores [src,hyp,ref], [ref,hyp,src], [src,hyp,altref],
    [altref,hyp,src], [ref,hyp,altref] and [altref,hyp,ref], then
    returns mu * (1 - sigma) with sigma the population standard
    deviation of the six scores. Symmetric in ref and altref.
    """
    if altref is None:
        raise ValueError("agg requires exactly two references")
    return _combine_agg(backend.score_batch(_agg_requests(src, hyp, ref, altref)))


def evaluate_system_multiref(strategy: str, evalset: EvalSet, backend) -> ScoreTable:
    """Per-segment strategy scores for a whole evaluation set.

    All passes for all segments go to the backend as one batch (sliced
    back per segment afterwards), so external scorers are spawned once,
    not per segment.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown multi-reference strategy {strategy!r}; pick one of {', '.join(STRATEGIES)}")
    if strategy == "agg":
        if evalset.n_references != 2:
            raise ValueError("agg requires exactly two references")
        per_segment = 6
        requests = [
            req
            for seg in evalset.segments
            for req in _agg_requests(seg.source, seg.hypothesis, seg.references[0], seg.references[1])
        ]
    else:
        if len(evalset) > 0 and evalset.n_references < 1:
            raise ValueError("multi-reference scoring needs at least one reference")
        per_segment = evalset.n_references
        requests = [
            req for seg in evalset.segments for req in _per_ref_requests(seg.source, seg.hypothesis, seg.references)
        ]
    flat = backend.score_batch(requests)
    scores = []
    for i in range(len(evalset)):
        chunk = flat[i * per_segment : (i + 1) * per_segment]
        if strategy == "max":
            scores.append(max(chunk))
        elif strategy == "avg":
            scores.append(math.fsum(chunk) / len(chunk))
        else:
            scores.append(_combine_agg(chunk))
    return ScoreTable(system_name=evalset.system_name, scores=tuple(scores))
