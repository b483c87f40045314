"""Triplet parsing and canonical manuscript generation.

A study's findings arrive as ``{entity, position, exist}`` triplets.  They are
rewritten as a fixed-template manuscript: one yes/no question per distinct
``(entity, position)`` in sorted order, followed by a verdict sentence.
Identical triplet sets therefore always produce byte-identical text.
"""
import json
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from .errors import ParseError, ValidationError
from .text import Vocabulary, tokenize

EXIST_STATES = ("present", "absent", "uncertain")
UNSPECIFIED = "unspecified"
ANSWERS = {"present": "yes", "absent": "no", "uncertain": "uncertain"}
_ANSWER_RANK = {"no": 0, "uncertain": 1, "yes": 2}

VERDICT_ABNORMAL = "verdict: abnormal study."
VERDICT_NORMAL = "verdict: no abnormal findings."

REPORT_FORMATS = ("manuscript", "triplet_string", "passthrough")


@dataclass(frozen=True)
class Triplet:
    entity: str
    position: str
    exist: str

    def __post_init__(self):
        if not self.entity:
            raise ValidationError("triplet entity must be non-empty")
        if self.exist not in EXIST_STATES:
            raise ValidationError(
                f"unknown exist value {self.exist!r}; expected one of {', '.join(EXIST_STATES)}")

    def to_dict(self) -> dict:
        return {"entity": self.entity, "position": self.position, "exist": self.exist}


@dataclass(frozen=True)
class Manuscript:
    observations: Tuple[Tuple[str, str], ...]
    verdict_text: str
    verdict_label: str

    @property
    def full_text(self) -> str:
        parts = [f"{q} {a}." for q, a in self.observations]
        parts.append(self.verdict_text)
        return " ".join(parts)


@dataclass(frozen=True)
class ManuscriptLabels:
    labels: Tuple[int, ...]
    uncertain: Tuple[bool, ...]
    verdict: int
    answer_positions: Tuple[int, ...]


def _clean(value, field: str) -> str:
    if value is None:
        return ""
    if not isinstance(value, str):
        raise ValidationError(f"triplet field {field!r} must be a string, got {type(value).__name__}")
    return " ".join(value.split()).lower()


def make_triplet(entity, position=None, exist="present") -> Triplet:
    position = _clean(position, "position") or UNSPECIFIED
    return Triplet(_clean(entity, "entity"), position, _clean(exist, "exist"))


def parse_record(line: str) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        offset = len(line[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON at byte {offset}: {exc.msg}", offset) from None
    if not isinstance(record, dict):
        raise ParseError("expected a JSON object", 0)
    return record


def triplets_from_record(record: dict) -> Tuple[str, List[Triplet]]:
    study_id = record.get("study_id")
    if not isinstance(study_id, str):
        raise ValidationError("record needs a string 'study_id'")
    raw = record.get("triplets")
    if not isinstance(raw, list):
        raise ValidationError(f"study {study_id}: 'triplets' must be a list")
    out = []
    for item in raw:
        if not isinstance(item, dict):
            raise ValidationError(f"study {study_id}: each triplet must be an object")
        out.append(make_triplet(item.get("entity"), item.get("position"), item.get("exist")))
    return study_id, out


def parse_triplets(line: str) -> Tuple[str, List[Triplet]]:
    """Parse one JSONL record into ``(study_id, triplets)``."""
    return triplets_from_record(parse_record(line))


def serialize_triplets(study_id: str, triplets: Iterable[Triplet], **extra) -> str:
    record = {"study_id": study_id, "triplets": [t.to_dict() for t in triplets]}
    record.update(extra)
    return json.dumps(record, sort_keys=False)


def question(entity: str, position: str) -> str:
    if position == UNSPECIFIED:
        return f"is {entity} present?"
    return f"is {entity} present in the {position}?"


def generate_manuscript(triplets: Sequence[Triplet]) -> Manuscript:
    best = {}
    for t in triplets:
        key = (t.entity, t.position)
        answer = ANSWERS[t.exist]
        if key not in best or _ANSWER_RANK[answer] > _ANSWER_RANK[best[key]]:
            best[key] = answer
    observations = tuple((question(e, p), best[(e, p)]) for e, p in sorted(best))
    abnormal = any(a == "yes" for _, a in observations)
    return Manuscript(
        observations,
        VERDICT_ABNORMAL if abnormal else VERDICT_NORMAL,
        "abnormal" if abnormal else "normal",
    )


def manuscript_token_labels(m: Manuscript, vocab: Optional[Vocabulary] = None) -> ManuscriptLabels:
    """Binary labels per observation plus the verdict label.

    ``uncertain`` answers become label 0 with their flag set.  The token
    index of each answer word in the encoded full text (START at index 0) is
    reported as well; it only depends on tokenization, so ``vocab`` is
    accepted for interface symmetry but not consulted.
    """
    labels = tuple(1 if a == "yes" else 0 for _, a in m.observations)
    uncertain = tuple(a == "uncertain" for _, a in m.observations)
    positions = []
    cursor = 1
    for q, a in m.observations:
        cursor += len(tokenize(q))
        positions.append(cursor)
        cursor += len(tokenize(f"{a}."))
    return ManuscriptLabels(labels, uncertain, int(m.verdict_label == "abnormal"), tuple(positions))


def triplet_string(triplets: Sequence[Triplet]) -> str:
    """Raw concatenation of triplets in their original order."""
    return " ; ".join(f"{t.entity} {t.position} {t.exist}" for t in triplets)


def report_text(record: dict, fmt: str = "manuscript") -> str:
    """Text of one study record in the requested report format."""
    if fmt not in REPORT_FORMATS:
        raise ValidationError(f"unknown report format {fmt!r}; expected one of {', '.join(REPORT_FORMATS)}")
    if fmt == "passthrough":
        report = record.get("report")
        if not isinstance(report, str):
            raise ValidationError(f"study {record.get('study_id')}: passthrough needs a 'report' string")
        return report
    _, triplets = triplets_from_record(record)
    if fmt == "triplet_string":
        return triplet_string(triplets)
    return generate_manuscript(triplets).full_text


def convert_record(record: dict, fmt: str = "manuscript") -> dict:
    """Output row of the ``manuscript`` CLI command."""
    study_id, triplets = triplets_from_record(record)
    m = generate_manuscript(triplets)
    lab = manuscript_token_labels(m)
    return {
        "study_id": study_id,
        "full_text": report_text(record, fmt),
        "labels": list(lab.labels),
        "uncertain": list(lab.uncertain),
        "verdict": m.verdict_label,
    }
