"""Aligned evaluation sets and per-segment score tables.

Input files are plain text, one segment per line, UTF-8, LF or CRLF.
Score tables persist as TSV ``index<TAB>score`` with scores rendered as
the shortest round-tripping decimal. Text is deliberately not normalised
at load time: scorer backends must see the bytes the user supplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

# Guard annotations carried per segment in a ScoreTable.
GUARD_EMPTY = "empty-guarded"
GUARD_LANG = "lang-guarded"
_VALID_FLAGS = (None, GUARD_EMPTY, GUARD_LANG)


@dataclass(frozen=True)
class Direction:
    """A translation direction such as en-de.

    Codes are two-letter lowercase ASCII. Identical source and target
    codes are rejected unless ``allow_same`` is set (the flag does not
    take part in equality).
    """

    src_lang: str
    tgt_lang: str
    allow_same: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        for code in (self.src_lang, self.tgt_lang):
            if len(code) != 2 or not code.isascii() or not code.isalpha() or not code.islower():
                raise ValueError(f"invalid language code {code!r}: expected two lowercase ASCII letters")
        if self.src_lang == self.tgt_lang and not self.allow_same:
            raise ValueError(f"source and target language are both {self.src_lang!r}; pass allow_same to permit this")

    @classmethod
    def parse(cls, text: str, allow_same: bool = False) -> "Direction":
        """Parse a direction written as ``src-tgt``, e.g. ``en-de``."""
        parts = text.split("-")
        if len(parts) != 2:
            raise ValueError(f"invalid direction {text!r}: expected the form src-tgt, e.g. en-de")
        return cls(parts[0], parts[1], allow_same)

    def __str__(self) -> str:
        return f"{self.src_lang}-{self.tgt_lang}"


@dataclass(frozen=True)
class Segment:
    """One aligned (source, hypothesis, references) tuple."""

    index: int
    source: str
    hypothesis: str
    references: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "references", tuple(self.references))


@dataclass(frozen=True)
class EvalSet:
    """An ordered, aligned collection of segments for one system.

    Segment indices are contiguous from 0 and every segment carries the
    same number of references. Zero segments are accepted (aggregation
    rejects them later); zero references per segment means QE mode.
    """

    direction: Direction
    system_name: str
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.system_name:
            raise ValueError("system_name must be non-empty")
        for position, seg in enumerate(self.segments):
            if seg.index != position:
                raise ValueError(f"segment indices must be contiguous from 0; position {position} has index {seg.index}")
        counts = {len(seg.references) for seg in self.segments}
        if len(counts) > 1:
            raise ValueError(f"all segments must carry the same reference count, found {sorted(counts)}")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def n_references(self) -> int:
        return len(self.segments[0].references) if self.segments else 0


@dataclass(frozen=True)
class ScoreTable:
    """Per-segment scores for one system, with optional guard flags.

    Scores are positional: the score at position i belongs to segment
    index i of the associated EvalSet. Flags are one of None,
    GUARD_EMPTY or GUARD_LANG.
    """

    system_name: str
    scores: tuple[float, ...]
    guard_flags: tuple[str | None, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        flags = tuple(self.guard_flags) if self.guard_flags else (None,) * len(self.scores)
        object.__setattr__(self, "guard_flags", flags)
        if len(self.guard_flags) != len(self.scores):
            raise ValueError(f"{len(self.scores)} scores but {len(self.guard_flags)} guard flags")
        for i, score in enumerate(self.scores):
            if not math.isfinite(score):
                raise ValueError(f"score at index {i} is not finite: {score!r}")
        for i, flag in enumerate(self.guard_flags):
            if flag not in _VALID_FLAGS:
                raise ValueError(f"unknown guard flag at index {i}: {flag!r}")

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def guarded_count(self) -> int:
        return sum(1 for flag in self.guard_flags if flag is not None)


def system_score(table: ScoreTable) -> float:
    """Arithmetic mean of the segment scores (the system-level score)."""
    if len(table) == 0:
        raise ValueError("cannot compute a system score for an empty score table")
    return math.fsum(table.scores) / len(table)


def read_lines(path: str | Path) -> list[str]:
    """Read one-segment-per-line UTF-8 text, accepting LF or CRLF.

    Decodes line by line so that undecodable bytes can be reported with
    their 1-based line number.
    """
    raw = Path(path).read_bytes()
    raw_lines = raw.split(b"\n")
    if raw_lines and raw_lines[-1] == b"":
        raw_lines.pop()
    lines: list[str] = []
    for lineno, raw_line in enumerate(raw_lines, start=1):
        if raw_line.endswith(b"\r"):
            raw_line = raw_line[:-1]
        try:
            lines.append(raw_line.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise ValueError(f"{path}: line {lineno} is not valid UTF-8 ({exc.reason})") from None
    return lines


def load_evalset(
    src_path: str | Path,
    hyp_path: str | Path,
    ref_paths: Sequence[str | Path],
    direction: Direction,
    system_name: str,
) -> EvalSet:
    """Build an EvalSet from aligned line files.

    Reference k of segment i is line i of ``ref_paths[k]``; an empty
    ``ref_paths`` yields a reference-free (QE) EvalSet. All files must
    have the same line count or a ValueError names each file and its
    count.
    """
    columns: list[tuple[str, list[str]]] = [
        (str(src_path), read_lines(src_path)),
        (str(hyp_path), read_lines(hyp_path)),
    ]
    for ref_path in ref_paths:
        columns.append((str(ref_path), read_lines(ref_path)))
    counts = {len(lines) for _, lines in columns}
    if len(counts) > 1:
        detail = ", ".join(f"{name}: {len(lines)} lines" for name, lines in columns)
        raise ValueError(f"line count mismatch across input files ({detail})")
    src_lines = columns[0][1]
    hyp_lines = columns[1][1]
    ref_columns = [lines for _, lines in columns[2:]]
    segments = tuple(
        Segment(
            index=i,
            source=src_lines[i],
            hypothesis=hyp_lines[i],
            references=tuple(col[i] for col in ref_columns),
        )
        for i in range(len(src_lines))
    )
    return EvalSet(direction=direction, system_name=system_name, segments=segments)


def write_evalset(
    evalset: EvalSet,
    src_path: str | Path,
    hyp_path: str | Path,
    ref_paths: Sequence[str | Path],
) -> None:
    """Write an EvalSet's columns back to one-segment-per-line files."""
    if len(ref_paths) != evalset.n_references:
        raise ValueError(f"evalset has {evalset.n_references} references per segment but {len(ref_paths)} ref paths were given")

    def write_column(path: str | Path, lines: Iterable[str]) -> None:
        text = ""
        for line in lines:
            if "\n" in line or "\r" in line:
                raise ValueError(f"segment text contains a line break and cannot round-trip through {path}")
            text += line + "\n"
        Path(path).write_text(text, encoding="utf-8")

    write_column(src_path, (seg.source for seg in evalset.segments))
    write_column(hyp_path, (seg.hypothesis for seg in evalset.segments))
    for k, ref_path in enumerate(ref_paths):
        write_column(ref_path, (seg.references[k] for seg in evalset.segments))


def format_score_rows(table: ScoreTable) -> list[str]:
    """Render a score table as ``index<TAB>score`` rows."""
    return [f"{i}\t{score!r}" for i, score in enumerate(table.scores)]


def write_score_table(table: ScoreTable, path: str | Path) -> None:
    Path(path).write_text("".join(row + "\n" for row in format_score_rows(table)), encoding="utf-8")


def read_score_table(path: str | Path, system_name: str = "") -> ScoreTable:
    """Load a score TSV; ``#`` lines (e.g. trailers) are ignored.

    Indices must be exactly 0..n-1 in order: one score per segment
    index, no duplicates or gaps.
    """
    scores: list[float] = []
    for lineno, line in enumerate(read_lines(path), start=1):
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}: line {lineno}: expected index<TAB>score, got {line!r}")
        try:
            index = int(parts[0])
            score = float(parts[1])
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: could not parse {line!r}") from None
        if index != len(scores):
            raise ValueError(f"{path}: line {lineno}: expected index {len(scores)}, got {index}")
        if not math.isfinite(score):
            raise ValueError(f"{path}: line {lineno}: score is not finite")
        scores.append(score)
    return ScoreTable(system_name=system_name or str(path), scores=tuple(scores))
