"""Provenance: scoring signatures, model citations, reporting checks.

The signature is a single pipe-separated line that pins down how scores
were produced (interpreter, scoring framework, numeric precision,
model). Citations come from a small database shipped as a data file;
looking up an unknown model is a hard error with suggestions — never a
silent fallback to the base-framework paper.
"""

from __future__ import annotations

import json
import logging
import re
import subprocess
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

logger = logging.getLogger(__name__)

PRECISIONS = ("fp32", "fp16", "qint8", "unk")
UNKNOWN = "unk"

_CITATIONS_PATH = Path(__file__).parent / "data" / "citations.json"
_VERSION_RE = re.compile(r"\d+(?:\.\d+)+")

# All reporting patterns in one alternation so overlapping hits resolve
# leftmost-first (e.g. "wmt22-comet-da" yields "wmt22-comet" once, not
# an extra "comet-da" from inside it).
_REPORTING_RE = re.compile(
    r"xcomet-|wmt(?:20|21|22|23)-comet|wmt-da-estimator|comet[ -](?:da|20|21|22|23)",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class Signature:
    """The four provenance fields behind one scoring run.

    "Python" and "Comet" in the rendered form are fixed wire-format
    tokens, regardless of what produced the scores.
    """

    model: str
    interpreter_version: str = UNKNOWN
    framework_version: str = UNKNOWN
    precision: str = UNKNOWN

    def __post_init__(self) -> None:
        if not self.model:
            raise ValueError("signature needs a non-empty model identifier")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {', '.join(PRECISIONS)}, got {self.precision!r}")
        for name in ("model", "interpreter_version", "framework_version", "precision"):
            if "|" in getattr(self, name):
                raise ValueError(f"signature field {name} must not contain '|'")

    def render(self) -> str:
        return f"Python{self.interpreter_version}|Comet{self.framework_version}|{self.precision}|{self.model}"


def make_signature(
    model: str,
    interpreter_version: str = UNKNOWN,
    framework_version: str = UNKNOWN,
    precision: str = UNKNOWN,
) -> str:
    return Signature(model, interpreter_version, framework_version, precision).render()


def parse_signature(text: str) -> Signature:
    parts = text.split("|")
    if len(parts) != 4:
        raise ValueError(f"signature must have exactly four |-separated fields, got {len(parts)}")
    interp, framework, precision, model = parts
    if not interp.startswith("Python") or not framework.startswith("Comet"):
        raise ValueError(f"malformed signature {text!r}")
    return Signature(
        model=model,
        interpreter_version=interp[len("Python") :],
        framework_version=framework[len("Comet") :],
        precision=precision,
    )


@dataclass(frozen=True)
class ProbeConfig:
    """Commands whose output is scanned for a dotted version number."""

    interpreter_cmd: tuple[str, ...] | None = None
    framework_cmd: tuple[str, ...] | None = None


def _probe_version(command: Sequence[str], what: str) -> str:
    try:
        proc = subprocess.run(tuple(command), capture_output=True, timeout=30)
    except (OSError, subprocess.TimeoutExpired) as exc:
        logger.warning("%s probe %r failed (%s); using %s", what, command[0], exc, UNKNOWN)
        return UNKNOWN
    if proc.returncode != 0:
        logger.warning("%s probe exited with status %d; using %s", what, proc.returncode, UNKNOWN)
        return UNKNOWN
    text = proc.stdout.decode("utf-8", errors="replace") + proc.stderr.decode("utf-8", errors="replace")
    match = _VERSION_RE.search(text)
    if match is None:
        logger.warning("%s probe printed no dotted version; using %s", what, UNKNOWN)
        return UNKNOWN
    return match.group(0)


def detect_environment(config: ProbeConfig) -> dict[str, str]:
    """Best-effort version detection; failures degrade to "unk", never raise."""
    fields = {"interpreter_version": UNKNOWN, "framework_version": UNKNOWN}
    if config.interpreter_cmd:
        fields["interpreter_version"] = _probe_version(config.interpreter_cmd, "interpreter")
    if config.framework_cmd:
        fields["framework_version"] = _probe_version(config.framework_cmd, "framework")
    return fields


# --- citations ----------------------------------------------------------


@dataclass(frozen=True)
class CitationRecord:
    model_pattern: str
    url: str
    bibtex: str

    def __post_init__(self) -> None:
        if not self.url:
            raise ValueError(f"citation {self.model_pattern!r} has an empty url")
        if not self.bibtex.startswith("@"):
            raise ValueError(f"citation {self.model_pattern!r} bibtex must start with '@'")


def _normalize(identifier: str) -> str:
    # organization prefix is optional; matching is case-insensitive
    return identifier.rsplit("/", 1)[-1].strip().lower()


@lru_cache(maxsize=1)
def _database() -> dict[str, CitationRecord]:
    raw = json.loads(_CITATIONS_PATH.read_text(encoding="utf-8"))
    table: dict[str, CitationRecord] = {}
    for entry in raw["entries"]:
        record = CitationRecord(model_pattern=entry["key"], url=entry["url"], bibtex=entry["bibtex"])
        for name in [entry["key"], *entry.get("aliases", [])]:
            table[_normalize(name)] = record
    return table


def known_models() -> list[str]:
    return sorted(_database())


def _edit_distance(a: str, b: str) -> int:
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


def cite(model_identifier: str) -> CitationRecord:
    """Look up the citation record for a model identifier.

    Unknown identifiers raise, naming the three closest known keys by
    edit distance; the base-framework record is returned only when
    asked for explicitly.
    """
    name = _normalize(model_identifier)
    record = _database().get(name)
    if record is not None:
        return record
    nearest = sorted(_database(), key=lambda key: (_edit_distance(name, key), key))[:3]
    raise KeyError(f"no citation for model {model_identifier!r}; nearest known keys: {', '.join(nearest)}")


def check_reporting(document_text: str) -> list[str]:
    """All substrings of the text that name a concrete scoring model."""
    return [match.group(0) for match in _REPORTING_RE.finditer(document_text)]
