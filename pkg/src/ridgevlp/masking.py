"""Patch masks for images and token masks for text.

All generators are pure functions of their inputs and an integer seed.  Image
patches are selected by exponential keys: every patch draws ``E ~ Exp(1)``
and the ``count`` patches with the smallest ``E / w`` are masked.  With equal
weights this is a uniform sample without replacement; with unequal weights
it is successive sampling proportional to ``w``.
"""
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from . import rng as rngmod
from .errors import ConfigurationError, DimensionError
from .imaging import PatchGrid

EPSILON = 1e-8
TEXT_RATIO_PAIRED = 0.30
TEXT_RATIO_UNPAIRED = 0.15
DEFAULT_FILL = 0.5


def round_half_up(x) -> int:
    return int(Decimal(str(x)).to_integral_value(rounding=ROUND_HALF_UP))


def masked_count(ratio: float, total: int) -> int:
    return round_half_up(Decimal(str(ratio)) * total)


@dataclass(frozen=True)
class PatchMask:
    grid: PatchGrid
    masked: np.ndarray
    ratio_requested: float
    seed: int

    @property
    def count(self) -> int:
        return int(self.masked.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.masked)


@dataclass(frozen=True)
class TokenMask:
    positions: tuple
    ratio_requested: float
    seed: int

    def as_bool(self, length: int) -> np.ndarray:
        out = np.zeros(length, dtype=bool)
        out[list(self.positions)] = True
        return out


def _check_ratio(ratio):
    if not 0.0 <= ratio <= 1.0:
        raise ConfigurationError(f"mask ratio must lie in [0, 1], got {ratio}")


def _exponential_keys(n: int, seed: int, stream) -> np.ndarray:
    return rngmod.generator(seed, *stream).standard_exponential(n)


def weighted_patch_mask(grid: PatchGrid, weights, ratio: float, seed: int,
                        stream=("patch_mask",)) -> PatchMask:
    """Mask ``round_half_up(ratio * P)`` patches, drawn proportionally to ``weights``."""
    _check_ratio(ratio)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (grid.num_patches,):
        raise DimensionError(
            f"expected {grid.num_patches} patch weights, got shape {weights.shape}")
    count = masked_count(ratio, grid.num_patches)
    keys = _exponential_keys(grid.num_patches, seed, stream) / weights
    order = np.argsort(keys, kind="stable")
    masked = np.zeros(grid.num_patches, dtype=bool)
    masked[order[:count]] = True
    return PatchMask(grid, masked, float(ratio), int(seed))


def random_patch_mask(grid: PatchGrid, ratio: float, seed: int,
                      stream=("patch_mask",)) -> PatchMask:
    return weighted_patch_mask(grid, np.ones(grid.num_patches), ratio, seed, stream)


def patch_weights(response: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Mean response per patch plus a small floor."""
    from .imaging import patchify

    response = np.asarray(response, dtype=np.float64)
    if response.shape != (grid.image_height, grid.image_width):
        raise DimensionError(
            f"response of shape {response.shape} does not match a "
            f"{grid.image_height}x{grid.image_width} patch grid")
    patches, _ = patchify(response, grid.patch_size)
    return patches.mean(axis=1) + EPSILON


def filter_guided_mask(grid: PatchGrid, response, ratio: float, seed: int,
                       stream=("patch_mask",)) -> PatchMask:
    """Mask patches with probability proportional to their mean ridge response.

    ``response`` may be a :class:`~ridgevlp.ridge.ResponseMap` or a bare array.
    """
    data = getattr(response, "data", response)
    return weighted_patch_mask(grid, patch_weights(data, grid), ratio, seed, stream)


def apply_image_mask(img: np.ndarray, mask: PatchMask, fill: float = DEFAULT_FILL) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    g = mask.grid
    if img.shape != (g.image_height, g.image_width):
        raise DimensionError(f"image of shape {img.shape} does not match mask grid {g}")
    out = img.copy()
    for p in mask.indices:
        rows, cols = g.patch_slice(int(p))
        out[rows, cols] = fill
    return out


def text_mask(tokens, paired_with_image: bool, seed: int, stream=("text_mask",),
              ratio: float = None) -> TokenMask:
    """Choose token positions to replace by MASK.

    ``tokens`` is a :class:`~ridgevlp.text.TokenSequence` (anything with a
    boolean ``maskable`` array).  The ratio is 30% when the text comes paired
    with an image and 15% otherwise, unless given explicitly.
    """
    if ratio is None:
        ratio = TEXT_RATIO_PAIRED if paired_with_image else TEXT_RATIO_UNPAIRED
    _check_ratio(ratio)
    candidates = np.flatnonzero(np.asarray(tokens.maskable, dtype=bool))
    if candidates.size == 0:
        return TokenMask((), float(ratio), int(seed))
    count = max(1, masked_count(ratio, candidates.size))
    keys = _exponential_keys(candidates.size, seed, stream)
    chosen = np.sort(candidates[np.argsort(keys, kind="stable")[:count]])
    return TokenMask(tuple(int(p) for p in chosen), float(ratio), int(seed))
