"""Controlled A/B runs along one axis (masking strategy or report format)."""
import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig
from .data import StudyData, load_studies
from .errors import ConfigurationError
from .evaluate import eval_retrieval
from .train import loss_reduction, pretrain

log = logging.getLogger(__name__)

AXES = {
    "masking": ("mask_mode", ("none", "random", "filter_guided")),
    "report": ("report_format", ("passthrough", "triplet_string", "manuscript")),
}
COLUMNS = ("axis", "arm", "mask_ratio", "seed", "final_loss", "loss_ratio",
           "recall_i2t", "recall_t2i", "k")
FINAL_WINDOW = 20


@dataclass
class AblationResult:
    axis: str
    rows: List[dict] = field(default_factory=list)

    def summary(self) -> Dict[str, dict]:
        """Per-arm medians over seeds, in run order."""
        out: Dict[str, dict] = {}
        for r in self.rows:
            out.setdefault(r["arm"], {"rows": []})["rows"].append(r)
        for arm, s in out.items():
            rows = s.pop("rows")
            s["seeds"] = [r["seed"] for r in rows]
            for key in ("final_loss", "recall_i2t", "recall_t2i"):
                s[key] = float(np.median([r[key] for r in rows]))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r[k]) for k in COLUMNS})
        return buf.getvalue()

    def table(self) -> str:
        """Fixed-width text table of the per-arm medians."""
        summ = self.summary()
        width = max([len("arm")] + [len(a) for a in summ])
        lines = [f"{'arm':<{width}}  seeds  final_loss  recall_i2t  recall_t2i"]
        for arm, s in summ.items():
            lines.append(f"{arm:<{width}}  {len(s['seeds']):>5}  {s['final_loss']:>10.4f}"
                         f"  {s['recall_i2t']:>10.4f}  {s['recall_t2i']:>10.4f}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def arm_configs(cfg: RunConfig, axis: str, arms: Optional[Sequence[str]] = None,
                mask_ratios: Optional[Sequence[float]] = None):
    """``[(label, config)]``; configs differ from ``cfg`` only along ``axis``.

    On the masking axis every masked arm is repeated per mask ratio; the
    no-masking arm does not depend on the ratio and runs once.
    """
    if axis not in AXES:
        raise ConfigurationError(f"axis must be one of {tuple(AXES)}, got {axis!r}")
    key, default_arms = AXES[axis]
    arms = tuple(arms) if arms else default_arms
    for a in arms:
        if a not in default_arms:
            raise ConfigurationError(f"unknown {axis} arm {a!r}; choose from {default_arms}")
    ratios = tuple(mask_ratios) if mask_ratios else (cfg.image_mask_ratio,)
    out = []
    for a in arms:
        if axis == "masking" and a != "none" and len(ratios) > 1:
            for r in ratios:
                out.append((f"{a}@{r:g}", cfg.with_overrides({key: a, "image_mask_ratio": r})))
        else:
            out.append((a, cfg.with_overrides({key: a})))
    return out


def ablate(cfg: RunConfig, axis: str, train_data, held_out, seeds: Sequence[int] = (0, 1, 2),
           k: int = 1, arms: Optional[Sequence[str]] = None,
           mask_ratios: Optional[Sequence[float]] = None, out_dir=None,
           figures: bool = True) -> AblationResult:
    """Train every arm under every seed on the same data and evaluate recall@k.

    ``train_data``/``held_out`` are ``StudyData`` or paths to studies JSONL
    files.  Writes ``ablation_<axis>.csv`` (one row per arm and seed) and a
    bar chart to ``out_dir`` when given.
    """
    runs = arm_configs(cfg, axis, arms, mask_ratios)
    if not seeds:
        raise ConfigurationError("at least one seed is required")
    # images and filter responses depend on neither axis, so load them once
    train_data = _as_data(train_data, cfg)
    held_out = _as_data(held_out, cfg)
    result = AblationResult(axis)
    for label, arm_cfg in runs:
        for seed in seeds:
            run_cfg = arm_cfg.with_overrides({"seed": int(seed)})
            log.info("ablation %s: arm %s seed %d", axis, label, seed)
            st = pretrain(run_cfg, data=train_data, write_files=False)
            rec = eval_retrieval(st.params, st.model_cfg, st.vocab, held_out, run_cfg, k)
            totals = [r["total"] for r in st.log_rows]
            result.rows.append({
                "axis": axis,
                "arm": label,
                "mask_ratio": 0.0 if run_cfg.mask_mode == "none" else run_cfg.image_mask_ratio,
                "seed": int(seed),
                "final_loss": float(np.mean(totals[-FINAL_WINDOW:])),
                "loss_ratio": loss_reduction(st.log_rows, FINAL_WINDOW)
                if len(totals) >= FINAL_WINDOW else float("nan"),
                "recall_i2t": rec["i2t"],
                "recall_t2i": rec["t2i"],
                "k": k,
            })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"ablation_{axis}.csv").write_text(result.to_csv(), encoding="utf-8")
        (out / f"ablation_{axis}.txt").write_text(result.table(), encoding="utf-8")
        if figures:
            from .plotting import plot_ablation
            plot_ablation(_plot_summary(result), out / f"ablation_{axis}.png", "recall_i2t")
    return result


def _plot_summary(result: AblationResult) -> dict:
    summ = result.summary()
    return {arm: {"median": s["recall_i2t"],
                  "values": [r["recall_i2t"] for r in result.rows if r["arm"] == arm]}
            for arm, s in summ.items()}


def _as_data(data, cfg: RunConfig) -> StudyData:
    if isinstance(data, StudyData):
        return data
    return load_studies(data, cfg)
