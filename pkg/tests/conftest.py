import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ridgevlp.model import Batch, ModelConfig, init_params, mask_token_ids

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config(**kw):
    base = dict(vocab_size=12, num_patches=4, patch_dim=4, max_len=8, d=8, d_proj=4,
                blocks=2, cross_blocks=1, heads=2, mlp_ratio=2)
    base.update(kw)
    return ModelConfig(**base)


def tiny_batch(neg=True, seed=1):
    """Two samples with masked text and image positions, padded text rows."""
    r = np.random.default_rng(seed)
    patches = r.random((2, 4, 4))
    target = r.random((2, 4, 4))
    pm = np.array([[1, 0, 1, 0], [0, 1, 1, 0]], bool)
    ids = np.array([[1, 5, 6, 7, 8, 4, 0, 0], [1, 9, 10, 11, 4, 5, 6, 0]])
    tm = np.zeros_like(ids, bool)
    tm[0, 2] = tm[0, 4] = tm[1, 3] = True
    return Batch(patches, target, pm, ids, mask_token_ids(ids, tm), tm,
                 np.array([1, 0]) if neg else None)


@pytest.fixture
def tiny():
    cfg = tiny_config()
    return cfg, init_params(cfg, 0), tiny_batch()
