"""Run configuration: defaults, ``key = value`` files and ``--set`` overrides."""
import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Tuple

from .errors import ConfigurationError
from .reports import REPORT_FORMATS

MASK_MODES = ("none", "random", "filter_guided")
RECON_TARGETS = ("raw", "filtered")

# not part of the identity of a trained model
_UNHASHED = ("data", "out_dir", "checkpoint_every")


@dataclass(frozen=True)
class RunConfig:
    image_size: int = 32
    patch_size: int = 8
    scales: Tuple[float, ...] = (1.0, 2.0, 4.0)
    mask_mode: str = "filter_guided"
    recon_target: str = "filtered"
    image_mask_ratio: float = 0.75
    mask_fill: float = 0.5
    text_paired: bool = True
    report_format: str = "manuscript"
    max_len: int = 64
    vocab_min_count: int = 1
    d: int = 64
    d_proj: int = 32
    blocks: int = 2
    cross_blocks: int = 1
    heads: int = 4
    mlp_ratio: int = 4
    init_std: float = 0.05
    tau_init: float = 0.07
    batch_size: int = 16
    steps: int = 200
    lr: float = 3e-4
    lr_min: float = 1e-5
    warmup_frac: float = 0.1
    weight_decay: float = 0.05
    seed: int = 0
    data: str = ""
    out_dir: str = "runs/default"
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("image_size", "patch_size", "max_len", "d", "d_proj", "blocks",
                     "heads", "mlp_ratio", "batch_size", "steps", "vocab_min_count"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("image_mask_ratio", "warmup_frac", "mask_fill"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.cross_blocks < 0 or self.checkpoint_every < 0:
            raise ConfigurationError("cross_blocks and checkpoint_every must be non-negative")
        if self.image_size % self.patch_size:
            raise ConfigurationError(
                f"patch_size {self.patch_size} does not divide image_size {self.image_size}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigurationError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.recon_target not in RECON_TARGETS:
            raise ConfigurationError(
                f"recon_target must be one of {RECON_TARGETS}, got {self.recon_target!r}")
        if self.report_format not in REPORT_FORMATS:
            raise ConfigurationError(
                f"report_format must be one of {REPORT_FORMATS}, got {self.report_format!r}")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigurationError(f"scales must be a non-empty list of positive values")
        if self.lr <= 0 or self.lr_min < 0 or self.weight_decay < 0 or self.tau_init <= 0:
            raise ConfigurationError("lr and tau_init must be positive; lr_min, weight_decay non-negative")

    def canonical(self, hashed_only: bool = False) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if hashed_only and f.name in _UNHASHED:
                continue
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical(hashed_only=True).encode("utf-8")).hexdigest()

    def with_overrides(self, overrides) -> "RunConfig":
        """Apply ``{"key": "value"}`` (string values) or already-typed values."""
        types = {f.name: f.type for f in fields(self)}
        changes = {}
        for key, value in dict(overrides).items():
            key = key.strip()
            if key not in types:
                raise ConfigurationError(f"unknown config key {key!r}")
            changes[key] = _parse(key, value, getattr(self, key)) if isinstance(value, str) else value
        return replace(self, **changes)

    def save(self, path) -> None:
        Path(path).write_text(self.canonical(), encoding="utf-8")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.replace("[", "").replace("]", "").split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from None
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    return text


def parse_assignments(text: str) -> dict:
    """``key = value`` lines; ``#``/``;`` comments and ``[section]`` headers are ignored."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(";") or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {n} is not key = value: {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then ``key=value`` overrides."""
    cfg = RunConfig()
    if path:
        cfg = cfg.with_overrides(parse_assignments(Path(path).read_text(encoding="utf-8")))
    extra = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        extra[k.strip()] = v
    return cfg.with_overrides(extra) if extra else cfg
