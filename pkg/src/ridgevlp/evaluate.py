"""Image-text retrieval evaluation (recall@k in both directions)."""
import numpy as np

from .data import StudyData, encode_texts
from .errors import ConfigurationError
from .model import embed


def ranks_of_truth(sim: np.ndarray) -> np.ndarray:
    """0-based rank of the true partner (the diagonal) in every row.

    Ties are broken by index, as a stable descending sort would.
    """
    diag = np.diag(sim)[:, None]
    idx = np.arange(sim.shape[0])
    better = (sim > diag).sum(axis=1)
    tied_before = ((sim == diag) & (idx[None, :] < idx[:, None])).sum(axis=1)
    return better + tied_before


def recall_at_k(sim: np.ndarray, k: int) -> dict:
    """``sim[i, j]`` scores image ``i`` against text ``j``; pair ``i`` matches ``i``."""
    n = sim.shape[0]
    if k < 1 or k > n:
        raise ConfigurationError(f"recall@{k} needs between 1 and {n} candidates")
    return {
        "i2t": float((ranks_of_truth(sim) < k).mean()),
        "t2i": float((ranks_of_truth(sim.T) < k).mean()),
    }


def similarity(params, model_cfg, vocab, data: StudyData, report_format: str, max_len: int):
    text = encode_texts(data.texts(report_format), vocab, max_len)
    z_im, z_txt = embed(params, model_cfg, data.patches(), text.ids)
    return z_im @ z_txt.T


def eval_retrieval(params, model_cfg, vocab, data: StudyData, cfg, k: int = 1) -> dict:
    if len(data) < k:
        raise ConfigurationError(f"recall@{k} needs at least {k} held-out pairs, got {len(data)}")
    sim = similarity(params, model_cfg, vocab, data, cfg.report_format, cfg.max_len)
    out = recall_at_k(sim, k)
    out["k"] = k
    out["n"] = len(data)
    return out
