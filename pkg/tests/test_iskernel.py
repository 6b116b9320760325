import math

import numpy as np
import pytest
from scipy import integrate, stats

from perpetuity_is import _numerics as nx
from perpetuity_is.iskernel import ISKernel, verify_astar
from perpetuity_is.recursion import PerpetuityM1, make_coupling
from perpetuity_is.rng import stream
from perpetuity_is.tailmodels import ShiftedPareto, ShiftedWeibull, UserTailModel

PARAMS = make_coupling(PerpetuityM1(ShiftedWeibull(0.5, 2.0, 1.5)), 0.5, 0.0)
INC = PARAMS.increment
S8 = PARAMS.crossing_level(8 * math.log(10))
K = ISKernel(INC, S8, -10.0, 0.5)


def w_reference(kernel, c):
    """atom0 * tail(c) + (1/mu) * integral of tail(c - t) I'(t), by plain quad."""
    lad = kernel.ladder
    inc = kernel.increment
    f = lambda t: inc.tail(c - t) * inc.tail(t) / lad.mu
    body, _ = integrate.quad(f, 0.0, math.inf, epsabs=0, epsrel=1e-12, limit=500,
                             points=None)
    return lad.atom0 * inc.tail(c) + body


def test_v_examples():
    assert K.v(S8 + 1e-9) == 1.0
    assert K.v(S8) == pytest.approx(0.406006, abs=1e-6)
    assert K.v(S8 - 3.0) == pytest.approx(0.0915782, abs=1e-7)


@pytest.mark.parametrize("c", [-1.0, 0.0, 0.5, 2.0, 7.0, 25.0, 80.0])
def test_w_matches_convolution_reference(c):
    assert K.w_at_distance(c) == pytest.approx(w_reference(K, c), rel=1e-9)


def test_w_is_one_when_event_sure():
    assert K.w(S8 + 5.0) == 1.0


def test_w_at_level_matches_plain_monte_carlo():
    rng = np.random.default_rng(11)
    n = 10**7
    xi = INC.tail_quantile_array(1.0 - rng.random(n))
    wl = K.ladder.sample_array(1.0 - rng.random(n))
    hit = (xi + wl > 0).astype(float)
    se = hit.std() / math.sqrt(n)
    assert abs(hit.mean() - K.w(S8)) < 3 * se


def test_w_minus_v_is_small_relative_to_increment_tail():
    ys = -np.array([20.0, 80.0, 320.0, 1280.0])
    k0 = ISKernel(INC, 0.0, 0.0, 0.5)
    rel = [(k0.w(y) - k0.v(y)) / INC.tail(-y) for y in ys]
    assert all(abs(b) < abs(a) for a, b in zip(rel, rel[1:]))


def test_verify_astar_reference_config_passes():
    rep = verify_astar(K, 2.0)
    assert rep.passed and rep.worst_margin >= -0.5
    assert not rep.underflow


def test_verify_astar_adversarial_fails():
    heavy = ShiftedPareto(3.0, 1.0, 2.0)
    k = ISKernel(heavy, 0.0, 0.0, 0.5)
    rep = verify_astar(k, 2.0)
    assert not rep.passed and rep.worst_margin < -0.5
    assert rep.worst_point <= 0.0


def test_verify_astar_two_exponents_evaluated_independently():
    a = verify_astar(K, 2.0)
    b = verify_astar(K, 2.5)
    assert math.isfinite(a.worst_margin) and math.isfinite(b.worst_margin)


def test_verify_astar_bad_inputs():
    with pytest.raises(ValueError):
        verify_astar(K, 2.0, grid=[])
    with pytest.raises(ValueError):
        verify_astar(K, 1.5)
    with pytest.raises(ValueError):
        verify_astar(K, 2.0, grid=[S8])


def test_verify_astar_csv(tmp_path):
    rep = verify_astar(K, 2.0, grid=np.linspace(S8 - 40, S8 - 10, 5))
    out = tmp_path / "a.csv"
    rep.write_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "y,v,w,ratio" and len(lines) == 6


def test_kernel_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ISKernel(INC, S8, 1.0)
    with pytest.raises(ValueError):
        ISKernel(INC, S8, -1.0, 1.5)
    with pytest.raises(ValueError):
        K.v(math.nan)


def _rejection(kernel, c, n, rng):
    out = []
    while len(out) < n:
        xi = kernel.increment.tail_quantile_array(1.0 - rng.random(8 * n))
        wl = kernel.ladder.sample_array(1.0 - rng.random(8 * n))
        out.extend(xi[xi + wl > c])
    return np.array(out[:n])


@pytest.mark.parametrize("c", [0.0, 1.0, 2.0])
def test_conditional_sampler_vs_rejection(c):
    k = ISKernel(INC, 0.0, 0.0, 0.5)
    rng = stream(3, int(c))
    n = 20_000
    draws = np.array([k.sample_conditional_increment(-c, rng) for _ in range(n)])
    ref = _rejection(k, c, n, rng)
    res = stats.ks_2samp(draws, ref)
    assert res.statistic < 1.628 * math.sqrt(2 / n)


def test_conditional_sampler_sure_event_is_unconditional():
    k = ISKernel(INC, 0.0, 0.0, 0.5)
    rng = stream(4, 0)
    draws = np.array([k.sample_conditional_increment(10.0, rng) for _ in range(50_000)])
    res = stats.kstest(draws, INC.cdf_array)
    assert res.pvalue > 0.01


def test_tail_component_exceeds_threshold():
    k = ISKernel(INC, 0.0, 0.0, 0.5)
    tx, body, _ = k.w_parts(3.0)
    rng = np.random.default_rng(0)
    c = 3.0
    for _ in range(200):
        u2 = 1.0 - rng.random()
        assert INC.tail_quantile(u2 * tx) > c


def test_one_step_ratio_has_unit_mean():
    """Under the kernel the one-step ratio w(y + a*)/v(z + a*) has mean 1."""
    y = -4.0
    c = K.distance(y)
    inc = K.increment
    rng = stream(5, 0)
    n = 200_000
    vals = np.empty(n)
    for i in range(n):
        _, lw, lv, st = nx.kernel_step(inc.fid, inc.pvec, K.mu, K.ladder.t0, c, rng.random(),
                                       1.0 - rng.random(), K.rel_tol)
        assert st == 0
        vals[i] = math.exp(lw - lv)
    se = vals.std() / math.sqrt(n)
    assert np.all(vals > 0) and np.all(np.isfinite(vals))
    assert abs(vals.mean() - 1.0) < 4 * se


def test_python_and_compiled_steps_agree():
    slow_inc = UserTailModel(INC.tail, lower_bound=INC.lower(),
                             tail_quantile_fn=INC.tail_quantile,
                             integrated_tail_fn=INC.integrated_tail)
    slow = ISKernel(slow_inc, S8, -10.0, 0.5)
    assert not slow.compiled
    for c in (1.0, 12.0):
        assert slow.w_at_distance(c) == pytest.approx(K.w_at_distance(c), rel=1e-8)
    for seed in range(5):
        a = K.step(3.0, stream(seed, 0))
        b = slow.step(3.0, stream(seed, 0))
        assert a[0] == pytest.approx(b[0], rel=1e-6, abs=1e-8)
        assert a[1] == pytest.approx(b[1], rel=1e-8)


def test_walk_starting_above_level_has_zero_crossing_time():
    k = ISKernel(INC, -3.0, -1.0, 0.5)
    res = k.run_walk_to_cross(stream(9, 0))
    assert res.tau == 0 and res.loglr == 0.0


def test_first_step_crossing_carries_one_step_ratio():
    k = ISKernel(INC, 0.2, -1.0, 0.5)
    for seed in range(40):
        xi, lw, lv = k.step(0.0, stream(seed, 0))
        if xi > 0.2:
            res = k.run_walk_to_cross(stream(seed, 0))
            assert res.tau == 1 and res.loglr == pytest.approx(lw - lv, rel=1e-12)
            return
    pytest.fail("no first-step crossing in 40 seeds")


def test_walk_callback_and_increments():
    seen = []
    res = K.run_walk_to_cross(stream(1, 1), callback=lambda n, xi, s: seen.append((n, xi, s)))
    assert res.tau == len(seen) == len(res.increments)
    assert res.walk == pytest.approx(np.sum(res.increments))
    assert res.walk > S8 and all(s <= S8 for _, _, s in seen[:-1])
    fast = K.run_walk_to_cross(stream(1, 1))
    assert fast.tau == res.tau and fast.loglr == pytest.approx(res.loglr, rel=1e-12)
