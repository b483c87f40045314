"""Pre-training loop."""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (BatchBuilder, StudyData, batch_indices, encode_texts, load_studies,
                   make_vocab, model_config)
from .errors import ConfigurationError, TrainingError
from .model import ModelConfig, init_params, loss_and_grads, temperature
from .optim import AdamWState, adamw_step, lr_at
from .text import Vocabulary

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.ckpt"
LAST_GOOD_NAME = "last_good.ckpt"
LOG_NAME = "loss_log.jsonl"


@dataclass
class TrainState:
    cfg: RunConfig
    model_cfg: ModelConfig
    vocab: Vocabulary
    params: dict
    opt: AdamWState
    step: int = 0
    log_rows: List[dict] = field(default_factory=list)


def decayed_names(params) -> set:
    """Matrices get weight decay; biases, norms, tables of one row and log_tau do not."""
    return {k for k, v in params.items() if v.ndim >= 2 and not k.endswith(".pos")}


def save_state(state: TrainState, path) -> None:
    blobs = {f"param/{k}": v for k, v in state.params.items()}
    for k, v in state.opt.m.items():
        blobs[f"adam_m/{k}"] = v
    for k, v in state.opt.v.items():
        blobs[f"adam_v/{k}"] = v
    meta = {
        "step": state.step,
        "adam_step": state.opt.step,
        "vocab": state.vocab.itos[4:],
        "model": state.model_cfg.to_dict(),
        "config": state.cfg.canonical(),
    }
    save_checkpoint(path, blobs, state.cfg.hash, meta)


def load_state(path, cfg: RunConfig) -> TrainState:
    blobs, _, meta = load_checkpoint(path, expected_hash=cfg.hash)
    params = {k[6:]: v for k, v in blobs.items() if k.startswith("param/")}
    opt = AdamWState(step=int(meta["adam_step"]),
                     m={k[7:]: v for k, v in blobs.items() if k.startswith("adam_m/")},
                     v={k[7:]: v for k, v in blobs.items() if k.startswith("adam_v/")})
    return TrainState(cfg, ModelConfig(**meta["model"]), Vocabulary(meta["vocab"]), params, opt,
                      int(meta["step"]))


def load_model(path, cfg: RunConfig):
    """``(params, model_cfg, vocab)`` from a checkpoint written under ``cfg``."""
    st = load_state(path, cfg)
    return st.params, st.model_cfg, st.vocab


def _read_log(path, upto: int) -> List[dict]:
    if not Path(path).exists():
        return []
    rows = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
    return [r for r in rows if r["step"] < upto]


def _write_log(path, rows) -> None:
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


def pretrain(cfg: RunConfig, data: Optional[StudyData] = None, resume=None,
             stop_at: Optional[int] = None, out_dir=None, write_files: bool = True,
             figures: bool = True) -> TrainState:
    """Run (or continue) pre-training.

    ``stop_at`` ends the run early after that many total steps, as an
    interruption would; the checkpoint written then can be passed back as
    ``resume``.
    """
    out = Path(out_dir or cfg.out_dir)
    if data is None:
        if not cfg.data:
            raise ConfigurationError("no training data: set data=<studies.jsonl>")
        data = load_studies(cfg.data, cfg)
    if len(data) < cfg.batch_size:
        raise ConfigurationError(f"batch size {cfg.batch_size} exceeds the {len(data)} training studies")

    if resume:
        state = load_state(resume, cfg)
        vocab = state.vocab
        state.log_rows = _read_log(out / LOG_NAME, state.step)
    else:
        vocab = make_vocab(data.texts(cfg.report_format), cfg)
        mcfg = model_config(cfg, len(vocab))
        state = TrainState(cfg, mcfg, vocab, init_params(mcfg, cfg.seed), AdamWState())
    text = encode_texts(data.texts(cfg.report_format), vocab, cfg.max_len)
    builder = BatchBuilder(data, text, cfg)
    decay = decayed_names(state.params)
    if write_files:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.txt")
        vocab.save(out / "vocab.txt")

    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    while state.step < end:
        step = state.step
        batch = builder.build(batch_indices(len(data), cfg.batch_size, cfg.seed, step), step)
        report, grads, _ = loss_and_grads(state.params, batch, state.model_cfg)
        finite = math.isfinite(report.total) and all(np.all(np.isfinite(g)) for g in grads.values())
        if not finite:
            if write_files:
                save_state(state, out / LAST_GOOD_NAME)
                _write_log(out / LOG_NAME, state.log_rows)
            raise TrainingError(f"non-finite loss or gradient at step {step}; "
                                f"last good state saved to {out / LAST_GOOD_NAME}")
        tau, _ = temperature(state.params)
        lr = lr_at(step, cfg.steps, cfg.lr, cfg.lr_min, cfg.warmup_frac)
        state.log_rows.append(json.loads(report.to_json(step, tau)))
        adamw_step(state.params, grads, state.opt, lr, cfg.weight_decay, decay)
        state.step += 1
        if step % 20 == 0:
            log.info("step %d total %.4f (text %.3f image %.4f itc %.3f itm %s) lr %.2e",
                     step, report.total, report.mvlm_text, report.mvlm_image, report.itc,
                     "-" if report.itm is None else f"{report.itm:.3f}", lr)
        if write_files and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            save_state(state, out / CHECKPOINT_NAME)

    if write_files:
        save_state(state, out / CHECKPOINT_NAME)
        _write_log(out / LOG_NAME, state.log_rows)
        if figures:
            from .plotting import plot_loss_curve
            plot_loss_curve(state.log_rows, out / "loss_curve.png")
    return state


def loss_reduction(rows, window: int = 20) -> float:
    """Ratio of the mean total loss over the last ``window`` steps to the first ``window``."""
    totals = [r["total"] for r in rows]
    if len(totals) < window:
        raise ConfigurationError(f"need at least {window} logged steps, got {len(totals)}")
    return float(np.mean(totals[-window:]) / np.mean(totals[:window]))
