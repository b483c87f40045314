import math

import numpy as np
import pytest

from ridgevlp.errors import TrainingError
from ridgevlp.optim import AdamWState, adamw_step, lr_at


def test_zero_gradient_no_decay_is_a_no_op():
    p = {"w": np.array([1.0, -2.0])}
    adamw_step(p, {"w": np.zeros(2)}, AdamWState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_descends_on_a_parabola():
    p = {"x": np.array(1.0)}
    adamw_step(p, {"x": 2 * p["x"]}, AdamWState(), lr=0.1, weight_decay=0.05)
    assert p["x"] < 1.0


def test_two_step_trace_by_hand():
    lr, wd, eps = 0.1, 0.05, 1e-8
    # step 1, g = 2: m = 0.2, v = 0.004, bias-corrected 2 and 4
    x1 = 1.0 * (1 - lr * wd) - lr * 2.0 / (2.0 + eps)
    # step 2, g = -1: m = 0.08, v = 0.004996
    m_hat = 0.08 / (1 - 0.9**2)
    v_hat = 0.004996 / (1 - 0.999**2)
    x2 = x1 * (1 - lr * wd) - lr * m_hat / (math.sqrt(v_hat) + eps)
    p = {"x": np.array(1.0)}
    st = AdamWState()
    adamw_step(p, {"x": np.array(2.0)}, st, lr, wd)
    assert abs(float(p["x"]) - x1) < 1e-15
    adamw_step(p, {"x": np.array(-1.0)}, st, lr, wd)
    assert abs(float(p["x"]) - x2) < 1e-14
    assert st.step == 2


def test_decay_only_on_named_parameters():
    p = {"w": np.array(1.0), "b": np.array(1.0)}
    zero = {"w": np.array(0.0), "b": np.array(0.0)}
    adamw_step(p, zero, AdamWState(), lr=0.1, weight_decay=0.5, decay={"w"})
    assert float(p["w"]) == 0.95 and float(p["b"]) == 1.0


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_gradient_aborts(bad):
    p = {"w": np.array([1.0])}
    st = AdamWState()
    with pytest.raises(TrainingError, match="'w'"):
        adamw_step(p, {"w": np.array([bad])}, st, 0.1, 0.0)
    assert st.step == 0 and float(p["w"][0]) == 1.0


def test_schedule_shape():
    total, peak, floor = 200, 3e-4, 1e-5
    lrs = [lr_at(s, total, peak, floor, 0.1) for s in range(total)]
    assert lrs[0] == pytest.approx(peak / 20)
    assert lrs[19] == pytest.approx(peak)
    assert lrs[20] == pytest.approx(peak)
    assert lrs[-1] == pytest.approx(floor)
    assert all(a <= b for a, b in zip(lrs[:20], lrs[1:20]))
    assert all(a >= b for a, b in zip(lrs[20:], lrs[21:]))
    # cosine midpoint
    assert lrs[20 + 179 // 2] == pytest.approx(floor + 0.5 * (peak - floor)
                                               * (1 + math.cos(math.pi * 89 / 179)))


def test_schedule_without_warmup():
    assert lr_at(0, 10, 1.0, 0.0, 0.0) == 1.0
