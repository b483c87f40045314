"""Synthetic image-report pairs.

Each study is a small dark, noisy image with up to three bright structures,
one per quadrant, and the triplets describing them.  Structures are

* ``tube``    an anti-aliased thin line segment,
* ``nodule``  a small bright disc,
* ``opacity`` a broad, dimmer blob.

Every rendered structure has a ``present`` triplet; up to two ``absent``
distractor findings are added for (entity, position) pairs that were not
drawn.  A free-text "original" report in varying styles is also generated so
the raw-report baseline has something to pass through.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from . import rng as rngmod
from .errors import ConfigurationError
from .imaging import save_pgm
from .reports import Triplet, make_triplet

ENTITIES = ("tube", "opacity", "nodule")
POSITIONS = ("upper left", "upper right", "lower left", "lower right")
_STRUCTURE_COUNT_PROBS = (0.1, 0.3, 0.3, 0.3)

_SYNONYMS = {
    "tube": ("tube", "line", "catheter", "tubular density"),
    "opacity": ("opacity", "hazy opacity", "consolidation", "airspace shadowing"),
    "nodule": ("nodule", "small nodule", "nodular density", "rounded lesion"),
}
_ZONES = {
    "upper left": ("upper left", "left upper zone", "left apex region", "upper left quadrant"),
    "upper right": ("upper right", "right upper zone", "right apex region", "upper right quadrant"),
    "lower left": ("lower left", "left lower zone", "left base", "lower left quadrant"),
    "lower right": ("lower right", "right lower zone", "right base", "lower right quadrant"),
}
_PRESENT_TEMPLATES = (
    "there is a {e} in the {p}.",
    "{p}: {e} noted.",
    "a {e} is seen projecting over the {p}.",
    "{e} identified in the {p}.",
    "findings include a {e} at the {p}.",
)
_ABSENT_TEMPLATES = (
    "no {e} in the {p}.",
    "no evidence of {e} at the {p}.",
    "the {p} is clear of {e}.",
    "{e} is not seen in the {p}.",
)
_FILLERS = (
    "heart size is within normal limits.",
    "compared with the prior study.",
    "bony structures are intact.",
    "mediastinal contours are unremarkable.",
    "portable technique limits assessment.",
    "no acute osseous abnormality.",
)
_NORMAL_LINES = ("no acute cardiopulmonary process.", "lungs are clear.", "unremarkable study.")


@dataclass
class SyntheticStudy:
    study_id: str
    image: np.ndarray
    triplets: List[Triplet]
    report: str
    structures: list = field(default_factory=list)

    def record(self, image_name: str) -> dict:
        return {
            "study_id": self.study_id,
            "image": image_name,
            "triplets": [t.to_dict() for t in self.triplets],
            "report": self.report,
            "structures": self.structures,
        }


def _quadrant_origin(position: str, size: int):
    half = size // 2
    row = 0 if position.startswith("upper") else half
    col = 0 if position.endswith("left") else half
    return row, col


def _render_tube(canvas, g, oy, ox, half):
    cy = oy + half / 2 + g.uniform(-1.5, 1.5)
    cx = ox + half / 2 + g.uniform(-1.5, 1.5)
    angle = g.uniform(0, math.pi)
    length = g.uniform(0.55, 0.75) * half
    amp = g.uniform(0.7, 0.9)
    dy, dx = math.sin(angle), math.cos(angle)
    y, x = np.mgrid[0:canvas.shape[0], 0:canvas.shape[1]].astype(np.float64)
    t = np.clip((x - cx) * dx + (y - cy) * dy, -length / 2, length / 2)
    dist = np.hypot(x - (cx + t * dx), y - (cy + t * dy))
    cover = np.clip(1.1 - dist, 0.0, 1.0)
    canvas += amp * cover
    return {"entity": "tube", "center": [cy, cx], "angle": angle, "length": length, "amp": amp}


def _render_disc(canvas, g, oy, ox, half, radius, amp, soft):
    cy = oy + half / 2 + g.uniform(-2.0, 2.0)
    cx = ox + half / 2 + g.uniform(-2.0, 2.0)
    y, x = np.mgrid[0:canvas.shape[0], 0:canvas.shape[1]].astype(np.float64)
    dist = np.hypot(x - cx, y - cy)
    cover = np.clip((radius - dist) / soft + 0.5, 0.0, 1.0)
    canvas += amp * cover
    return {"center": [cy, cx], "radius": radius, "amp": amp}


def render_structure(canvas, g, entity, position):
    size = canvas.shape[0]
    oy, ox = _quadrant_origin(position, size)
    half = size // 2
    if entity == "tube":
        info = _render_tube(canvas, g, oy, ox, half)
    elif entity == "nodule":
        info = _render_disc(canvas, g, oy, ox, half, g.uniform(1.3, 2.0), g.uniform(0.75, 0.9), 1.0)
        info["entity"] = "nodule"
    else:
        info = _render_disc(canvas, g, oy, ox, half, g.uniform(3.5, 4.5), g.uniform(0.35, 0.5), 3.0)
        info["entity"] = "opacity"
    info["position"] = position
    return info


def _free_text_report(g, present, absent) -> str:
    sentences = []
    for e, p in present:
        tpl = _PRESENT_TEMPLATES[g.integers(len(_PRESENT_TEMPLATES))]
        sentences.append(tpl.format(e=_SYNONYMS[e][g.integers(4)], p=_ZONES[p][g.integers(4)]))
    for e, p in absent:
        tpl = _ABSENT_TEMPLATES[g.integers(len(_ABSENT_TEMPLATES))]
        sentences.append(tpl.format(e=_SYNONYMS[e][g.integers(4)], p=_ZONES[p][g.integers(4)]))
    if not present:
        sentences.append(_NORMAL_LINES[g.integers(len(_NORMAL_LINES))])
    for _ in range(g.integers(0, 3)):
        sentences.append(_FILLERS[g.integers(len(_FILLERS))])
    order = g.permutation(len(sentences))
    return " ".join(sentences[i] for i in order)


def make_study(index: int, seed: int, size: int = 32) -> SyntheticStudy:
    g = rngmod.generator(seed, "synth", index)
    canvas = g.normal(0.12, 0.03, size=(size, size))
    k = int(g.choice(4, p=_STRUCTURE_COUNT_PROBS))
    quadrants = [POSITIONS[i] for i in sorted(g.choice(4, size=k, replace=False))]
    present = [(ENTITIES[g.integers(3)], q) for q in quadrants]
    structures = [render_structure(canvas, g, e, p) for e, p in present]
    image = np.clip(canvas, 0.0, 1.0)

    candidates = [(e, p) for e in ENTITIES for p in POSITIONS if (e, p) not in present]
    n_absent = int(g.integers(0, 3))
    absent = [candidates[i] for i in g.choice(len(candidates), size=n_absent, replace=False)]
    triplet_order = g.permutation(len(present) + len(absent))
    described = [(e, p, "present") for e, p in present] + [(e, p, "absent") for e, p in absent]
    triplets = [make_triplet(*described[i]) for i in triplet_order]
    report = _free_text_report(g, present, absent)
    return SyntheticStudy(f"synth-{seed}-{index:05d}", image, triplets, report, structures)


def synth_dataset(n: int, seed: int, out_dir, size: int = 32) -> Path:
    """Write ``n`` studies as PGM images plus ``studies.jsonl``; returns the JSONL path."""
    if n < 1:
        raise ConfigurationError(f"need at least one study, got {n}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(n):
        study = make_study(i, seed, size)
        name = f"images/{study.study_id}.pgm"
        save_pgm(out / name, study.image)
        lines.append(json.dumps(study.record(name)))
    path = out / "studies.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
