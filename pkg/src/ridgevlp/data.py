"""Study loading, text encoding and batch assembly."""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from .config import RunConfig
from .errors import ConfigurationError
from .imaging import PatchGrid, load_image, patchify
from .masking import patch_weights, random_patch_mask, text_mask, weighted_patch_mask
from .model import Batch, ModelConfig, mask_token_ids
from .objectives import negative_pairing
from .reports import parse_record, report_text
from .ridge import multiscale_response
from .text import PAD, TokenSequence, Vocabulary, build_vocab, encode


@dataclass
class StudyData:
    records: List[dict]
    images: np.ndarray
    responses: np.ndarray
    grid: PatchGrid

    def __len__(self):
        return len(self.records)

    def patches(self) -> np.ndarray:
        return patchify(self.images, self.grid.patch_size)[0]

    def targets(self, recon_target: str) -> np.ndarray:
        src = self.responses if recon_target == "filtered" else self.images
        return patchify(src, self.grid.patch_size)[0]

    def weights(self) -> np.ndarray:
        return np.stack([patch_weights(r, self.grid) for r in self.responses])

    def texts(self, fmt: str) -> List[str]:
        return [report_text(r, fmt) for r in self.records]


def read_records(path) -> List[dict]:
    path = Path(path)
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(parse_record(line))
    if not records:
        raise ConfigurationError(f"{path}: no studies found")
    return records


def load_studies(path, cfg: RunConfig) -> StudyData:
    """Read a studies JSONL file (image paths relative to the file) and filter every image."""
    path = Path(path)
    records = read_records(path)
    images = []
    for r in records:
        img_path = Path(r["image"])
        if not img_path.is_absolute():
            img_path = path.parent / img_path
        images.append(load_image(img_path, cfg.image_size))
    images = np.stack(images)
    responses = np.stack([multiscale_response(im, cfg.scales).data for im in images])
    grid = PatchGrid.for_shape(images.shape[1:], cfg.patch_size)
    return StudyData(records, images, responses, grid)


@dataclass
class EncodedText:
    ids: np.ndarray
    maskable: np.ndarray

    def sequence(self, i: int) -> TokenSequence:
        return TokenSequence(self.ids[i], self.maskable[i])


def encode_texts(texts, vocab: Vocabulary, max_len: int) -> EncodedText:
    seqs = [encode(t, vocab, max_len) for t in texts]
    return EncodedText(np.stack([s.ids for s in seqs]), np.stack([s.maskable for s in seqs]))


def make_vocab(texts, cfg: RunConfig) -> Vocabulary:
    return build_vocab(texts, cfg.vocab_min_count)


def model_config(cfg: RunConfig, vocab_size: int) -> ModelConfig:
    grid_n = (cfg.image_size // cfg.patch_size) ** 2
    return ModelConfig(
        vocab_size=vocab_size, num_patches=grid_n, patch_dim=cfg.patch_size**2,
        max_len=cfg.max_len, d=cfg.d, d_proj=cfg.d_proj, blocks=cfg.blocks,
        cross_blocks=cfg.cross_blocks, heads=cfg.heads, mlp_ratio=cfg.mlp_ratio,
        init_std=cfg.init_std, tau_init=cfg.tau_init)


class BatchBuilder:
    """Deterministic batches: masks depend only on ``(seed, step, study index)``."""

    def __init__(self, data: StudyData, text: EncodedText, cfg: RunConfig):
        self.cfg = cfg
        self.grid = data.grid
        self.patches = data.patches()
        self.targets = data.targets(cfg.recon_target)
        self.weights = data.weights() if cfg.mask_mode == "filter_guided" else None
        self.text = text

    def image_mask(self, index: int, step: int) -> np.ndarray:
        cfg = self.cfg
        stream = ("image_mask", step, index)
        if cfg.mask_mode == "none":
            return np.zeros(self.grid.num_patches, dtype=bool)
        if cfg.mask_mode == "random":
            return random_patch_mask(self.grid, cfg.image_mask_ratio, cfg.seed, stream).masked
        return weighted_patch_mask(self.grid, self.weights[index], cfg.image_mask_ratio,
                                   cfg.seed, stream).masked

    def token_mask(self, index: int, step: int) -> np.ndarray:
        seq = self.text.sequence(index)
        tm = text_mask(seq, self.cfg.text_paired, self.cfg.seed, ("text_mask", step, index))
        return tm.as_bool(len(seq))

    def build(self, indices, step: int) -> Batch:
        indices = np.asarray(indices)
        ids = self.text.ids[indices]
        length = int((ids != PAD).sum(axis=1).max())
        ids = ids[:, :length]
        tmask = np.stack([self.token_mask(int(i), step)[:length] for i in indices])
        pmask = np.stack([self.image_mask(int(i), step) for i in indices])
        neg = negative_pairing(len(indices), self.cfg.seed, ("itm", step))
        return Batch(self.patches[indices], self.targets[indices], pmask, ids,
                     mask_token_ids(ids, tmask), tmask, neg)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    from . import rng as rngmod
    return rngmod.generator(seed, "shuffle", epoch).permutation(n)


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    per_epoch = n // batch_size
    if per_epoch == 0:
        raise ConfigurationError(f"batch size {batch_size} exceeds the {n} available studies")
    epoch, j = divmod(step, per_epoch)
    return epoch_order(n, seed, epoch)[j * batch_size:(j + 1) * batch_size]
