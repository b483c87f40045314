"""Gray images, resampling, PGM/PNG I/O and the patch grid.

Images are plain 2-D ``float64`` arrays with intensities in [0, 1]; row index
is ``y``, column index is ``x``.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DimensionError, ImageFormatError

_CHANNELS = {"1": 1, "L": 1, "P": 1, "LA": 2, "RGB": 3, "YCbCr": 3, "LAB": 3,
             "HSV": 3, "RGBA": 4, "CMYK": 4, "RGBX": 4}


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    rows: int
    cols: int

    @property
    def image_height(self) -> int:
        return self.rows * self.patch_size

    @property
    def image_width(self) -> int:
        return self.cols * self.patch_size

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size

    @classmethod
    def for_shape(cls, shape, patch_size: int) -> "PatchGrid":
        h, w = shape
        if patch_size <= 0 or h % patch_size or w % patch_size:
            raise DimensionError(
                f"patch size {patch_size} does not tile a {h}x{w} image")
        return cls(patch_size, h // patch_size, w // patch_size)

    def patch_slice(self, p: int):
        """Pixel rectangle ``(rows, cols)`` slices of patch ``p``."""
        if not 0 <= p < self.num_patches:
            raise IndexError(p)
        r, c = divmod(p, self.cols)
        s = self.patch_size
        return slice(r * s, (r + 1) * s), slice(c * s, (c + 1) * s)


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers and edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = pos - lo
        return lo, hi, frac

    ylo, yhi, fy = axis_weights(h, height)
    xlo, xhi, fx = axis_weights(w, width)
    top = img[ylo][:, xlo] * (1 - fx) + img[ylo][:, xhi] * fx
    bottom = img[yhi][:, xlo] * (1 - fx) + img[yhi][:, xhi] * fx
    return top * (1 - fy)[:, None] + bottom * fy[:, None]


def load_image(path, target_size: Optional[int] = None) -> np.ndarray:
    """Read an 8-bit grayscale PNG/PGM, scale to [0, 1] and optionally resize to a square."""
    path = Path(path)
    try:
        opened = Image.open(path)
    except UnidentifiedImageError:
        raise ImageFormatError(f"{path}: not a readable PNG/PGM image") from None
    with opened as im:
        mode = im.mode
        if mode != "L":
            if mode.startswith("I;16") or mode in ("I", "F"):
                raise ImageFormatError(
                    f"{path}: expected 8-bit grayscale, got mode {mode!r} (1 channel, not 8-bit)")
            channels = _CHANNELS.get(mode, len(im.getbands()))
            raise ImageFormatError(
                f"{path}: expected 1 grayscale channel, got {channels} channels (mode {mode!r})")
        data = np.asarray(im, dtype=np.float64)
    data = data / 255.0
    if target_size is not None and data.shape != (target_size, target_size):
        data = resize_bilinear(data, target_size, target_size)
    return np.clip(data, 0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] intensities to 0..255, rounding half up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_pgm(path, img: np.ndarray) -> None:
    """Write a binary (P5) PGM with maxval 255."""
    q = to_uint8(img)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def save_png(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img), mode="L").save(path, format="PNG")


def save_image(path, img: np.ndarray) -> None:
    if Path(path).suffix.lower() == ".png":
        save_png(path, img)
    else:
        save_pgm(path, img)


# raw dump: magic, then height and width as little-endian uint32, then
# row-major little-endian float64 samples
RAW_MAGIC = b"RAWF64\0\0"


def save_raw_f64(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f8")
    if data.ndim != 2:
        raise DimensionError(f"raw dumps hold 2-D arrays, got shape {data.shape}")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(np.array([h, w], dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(data).tobytes())


def load_raw_f64(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:8] != RAW_MAGIC or len(buf) < 16:
        raise ImageFormatError(f"{path}: not a raw float64 dump")
    h, w = (int(v) for v in np.frombuffer(buf[8:16], dtype="<u4"))
    if len(buf) != 16 + 8 * h * w:
        raise ImageFormatError(f"{path}: header says {h}x{w} but payload has {len(buf) - 16} bytes")
    return np.frombuffer(buf[16:], dtype="<f8").reshape(h, w).astype(np.float64)


def patchify(img: np.ndarray, patch_size: int):
    """Split into row-major flattened patches.

    Returns ``(patches, grid)`` with ``patches`` of shape
    ``(rows * cols, patch_size ** 2)``. Works on a leading batch axis too.
    """
    img = np.asarray(img)
    grid = PatchGrid.for_shape(img.shape[-2:], patch_size)
    lead = img.shape[:-2]
    s = patch_size
    x = img.reshape(*lead, grid.rows, s, grid.cols, s)
    x = np.moveaxis(x, -3, -2)  # (..., rows, cols, s, s)
    return x.reshape(*lead, grid.num_patches, s * s), grid


def unpatchify(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    patches = np.asarray(patches)
    lead = patches.shape[:-2]
    if patches.shape[-2:] != (grid.num_patches, grid.patch_dim):
        raise DimensionError(
            f"patches of shape {patches.shape[-2:]} do not match grid {grid}")
    s = grid.patch_size
    x = patches.reshape(*lead, grid.rows, grid.cols, s, s)
    x = np.moveaxis(x, -2, -3)
    return x.reshape(*lead, grid.image_height, grid.image_width)
