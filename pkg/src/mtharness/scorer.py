"""Pluggable segment scorers.

Three backends share one batch interface: a precomputed index-keyed
score table, an external process spoken to over a bit-exact
line-oriented wire protocol, and a built-in deterministic lexical
surrogate for tests and demos. Real neural metrics stay out of process
by design; this module only moves triples in and scores out.
"""

from __future__ import annotations

import math
import subprocess
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .evalset import EvalSet, ScoreTable, read_score_table


class ScorerError(RuntimeError):
    """A backend failed to produce one finite score per request."""


@dataclass(frozen=True)
class ScoreRequest:
    """One (source, hypothesis, reference) triple; reference None = QE."""

    source: str
    hypothesis: str
    reference: str | None = None


# --- wire protocol -----------------------------------------------------
#
# One request per line on the child's stdin: source,	hypothesis and
# reference joined by literal TABs (two fields in QE mode). Literal
# backslash, TAB and LF inside a field are escaped as \\, \t and \n, so
# the protocol stays line-oriented and bit-exact. The child answers
# with exactly one decimal number per line, in order.


def escape_field(text: str) -> str:
    """Escape one field for the wire (backslash first, then TAB, LF)."""
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def unescape_field(text: str) -> str:
    """Invert escape_field with a single left-to-right scan."""
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= len(text):
            raise ScorerError("dangling backslash at end of wire field")
        nxt = text[i + 1]
        if nxt == "\\":
            out.append("\\")
        elif nxt == "t":
            out.append("\t")
        elif nxt == "n":
            out.append("\n")
        else:
            raise ScorerError(f"invalid wire escape \\{nxt}")
        i += 2
    return "".join(out)


def format_request_line(request: ScoreRequest) -> str:
    fields = [request.source, request.hypothesis]
    if request.reference is not None:
        fields.append(request.reference)
    return "\t".join(escape_field(f) for f in fields)


def _check_homogeneous(requests: Sequence[ScoreRequest]) -> None:
    modes = {req.reference is None for req in requests}
    if len(modes) > 1:
        raise ValueError("cannot mix QE and reference-based requests in one batch")


# --- surrogate ---------------------------------------------------------


def _ngram_f1(a: str, b: str, n: int) -> float | None:
    """Multiset F1 over character n-grams; None when both sides lack them."""
    grams_a = Counter(a[i : i + n] for i in range(len(a) - n + 1))
    grams_b = Counter(b[i : i + n] for i in range(len(b) - n + 1))
    if not grams_a and not grams_b:
        return None
    if not grams_a or not grams_b:
        return 0.0
    overlap = sum(min(count, grams_b[gram]) for gram, count in grams_a.items())
    return 2.0 * overlap / (sum(grams_a.values()) + sum(grams_b.values()))


def _similarity(a: str, b: str) -> float:
    """Mean char n-gram F1 for n = 1..4, skipping orders absent on both sides."""
    values = [f1 for n in range(1, 5) if (f1 := _ngram_f1(a, b, n)) is not None]
    if not values:
        return 0.0
    return math.fsum(values) / len(values)


def surrogate_score(request: ScoreRequest, w_ref: float = 0.9, w_src: float = 0.1) -> float:
    """Deterministic lexical stand-in score in [0, 1].

    Reference mode blends hypothesis↔reference with hypothesis↔source
    similarity (the source term makes reference/source swaps visibly
    change the score); QE mode is hypothesis↔source only.
    """
    if request.reference is None:
        return _similarity(request.hypothesis, request.source)
    return w_ref * _similarity(request.hypothesis, request.reference) + w_src * _similarity(request.hypothesis, request.source)


class SurrogateBackend:
    """In-process lexical scorer; pure, deterministic, freely parallel."""

    def __init__(self, w_ref: float = 0.9, w_src: float = 0.1) -> None:
        if w_ref < 0 or w_src < 0:
            raise ValueError("surrogate weights must be nonnegative")
        if abs((w_ref + w_src) - 1.0) > 1e-9:
            raise ValueError("surrogate weights must sum to 1")
        self.w_ref = w_ref
        self.w_src = w_src

    def score_batch(self, requests: Sequence[ScoreRequest]) -> list[float]:
        _check_homogeneous(requests)
        return [surrogate_score(req, self.w_ref, self.w_src) for req in requests]

    def describe(self) -> str:
        return "surrogate"


class PrecomputedBackend:
    """Serves stored scores keyed by batch position (= segment index).

    Index keys avoid any text-normalization ambiguity: request i of the
    batch is answered with the stored score for index i.
    """

    def __init__(self, table: ScoreTable | str | Path) -> None:
        if not isinstance(table, ScoreTable):
            table = read_score_table(table)
        self._scores = table.scores
        self._source = table.system_name

    def score_batch(self, requests: Sequence[ScoreRequest]) -> list[float]:
        _check_homogeneous(requests)
        if len(requests) > len(self._scores):
            raise ScorerError(
                f"precomputed table {self._source} has {len(self._scores)} scores but index {len(requests) - 1} was requested"
            )
        return list(self._scores[: len(requests)])

    def describe(self) -> str:
        return f"precomputed:{self._source}"


class ExternalBackend:
    """Scores via a child process speaking the wire protocol.

    Each batch (or each shard of ``shard_size`` requests) is served by
    one child process, run sequentially in order and reassembled, so
    results do not depend on scheduling. Any shortfall in the child's
    output is an error — never a silent truncation.
    """

    def __init__(self, command: Sequence[str], shard_size: int | None = None) -> None:
        if not command:
            raise ValueError("external backend needs a non-empty command")
        if shard_size is not None and shard_size < 1:
            raise ValueError("shard_size must be at least 1")
        self.command = tuple(command)
        self.shard_size = shard_size

    def _run_shard(self, lines: list[str]) -> list[float]:
        payload = "".join(line + "\n" for line in lines).encode("utf-8")
        try:
            proc = subprocess.run(self.command, input=payload, capture_output=True)
        except OSError as exc:
            raise ScorerError(f"could not run external scorer {self.command[0]!r}: {exc}") from None
        stderr = proc.stderr.decode("utf-8", errors="replace").strip()
        if proc.returncode != 0:
            detail = f": {stderr}" if stderr else ""
            raise ScorerError(f"external scorer exited with status {proc.returncode}{detail}")
        out_lines = proc.stdout.decode("utf-8").split("\n")
        if out_lines and out_lines[-1] == "":
            out_lines.pop()
        if len(out_lines) != len(lines):
            raise ScorerError(f"external scorer answered {len(out_lines)} lines for {len(lines)} requests")
        scores: list[float] = []
        for lineno, line in enumerate(out_lines, start=1):
            try:
                score = float(line.strip())
            except ValueError:
                raise ScorerError(f"external scorer output line {lineno} is not a number: {line!r}") from None
            if not math.isfinite(score):
                raise ScorerError(f"external scorer output line {lineno} is not finite: {line!r}")
            scores.append(score)
        return scores

    def score_batch(self, requests: Sequence[ScoreRequest]) -> list[float]:
        _check_homogeneous(requests)
        lines = [format_request_line(req) for req in requests]
        if not lines:
            return []
        size = self.shard_size or len(lines)
        scores: list[float] = []
        for start in range(0, len(lines), size):
            scores.extend(self._run_shard(lines[start : start + size]))
        return scores

    def describe(self) -> str:
        return f"external:{self.command[0]}"


def score_batch(backend, requests: Sequence[ScoreRequest]) -> list[float]:
    """Score requests in order with any backend; one finite score each."""
    return backend.score_batch(requests)


def requests_from_evalset(evalset: EvalSet) -> list[ScoreRequest]:
    """Plain single-pass requests: first reference if any, else QE."""
    if evalset.n_references > 1:
        raise ValueError("evalset has multiple references; pick a multi-reference strategy instead of plain scoring")
    return [
        ScoreRequest(
            source=seg.source,
            hypothesis=seg.hypothesis,
            reference=seg.references[0] if seg.references else None,
        )
        for seg in evalset.segments
    ]


def score_evalset(backend, evalset: EvalSet) -> ScoreTable:
    scores = score_batch(backend, requests_from_evalset(evalset))
    return ScoreTable(system_name=evalset.system_name, scores=tuple(scores))
