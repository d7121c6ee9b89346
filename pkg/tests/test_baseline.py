import json

import numpy as np
import pytest

from catcontrol import baseline_grape as bg
from catcontrol.dynamics import SystemParams, default_channels
from catcontrol.gradients import forward
from catcontrol.hilbert import HilbertConfig, target_state


def small_target(alpha=0.5, n_fock=10):
    return target_state(alpha, 0.0, HilbertConfig(n_fock))


@pytest.mark.parametrize("alpha,n", [(0.0, 16), (1.0, 22), (2.0, 32), (-2.0, 32)])
def test_hilbert_dim(alpha, n):
    assert bg.hilbert_dim_for_alpha(alpha) == n


def test_grape_gradient_matches_finite_differences():
    target = small_target()
    cfg = bg.GrapeConfig()
    u = bg.sinusoidal_init(cfg)
    chi = SystemParams().chi
    dt = cfg.duration / cfg.n_steps
    loss, grad = bg.unitary_infidelity(u, target, 10, chi, dt)
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(4):
        d = rng.normal(size=u.shape)
        lp, _ = bg.unitary_infidelity(u + h * d, target, 10, chi, dt, need_grad=False)
        lm, _ = bg.unitary_infidelity(u - h * d, target, 10, chi, dt, need_grad=False)
        fd = (lp - lm) / (2 * h)
        an = float(np.sum(grad * d))
        assert abs(fd - an) <= 1e-5 * max(abs(an), 1e-3)


def test_grape_vacuum_is_trivial():
    target = small_target(0.0)
    cfg = bg.GrapeConfig(init_amplitude=(0, 0, 0, 0), max_iter=5)
    ctl, trace = bg.grape_optimize(target, cfg)
    assert trace[0] == pytest.approx(0.0, abs=1e-12)
    assert trace[-1] == pytest.approx(0.0, abs=1e-12)
    assert len(trace) <= 2


def test_grape_trace_is_monotone_on_small_problem():
    cfg = bg.GrapeConfig(max_iter=60, n_steps=40, duration=1.0)
    _, trace = bg.grape_optimize(small_target(0.7, 10), cfg)
    assert np.all(np.diff(trace) <= 1e-12)
    assert trace[-1] < 0.5 * trace[0]


@pytest.mark.slow
def test_grape_reaches_cat_one():
    n = bg.hilbert_dim_for_alpha(1.0)
    target = target_state(1.0, 0.0, HilbertConfig(n))
    _, trace = bg.grape_optimize(target, bg.GrapeConfig(max_iter=500))
    assert len(trace) <= 501
    assert 1 - trace[-1] >= 0.99


def test_grape_non_finite_aborts():
    target = small_target()
    u = np.full((4, 5), np.nan)
    with pytest.raises(bg.OptimizationError):
        bg.unitary_infidelity(u, target, 10, SystemParams().chi, 0.1)


# ---------------------------------------------------------------- smoothing

def test_smoothing_constant_input():
    ctl = bg.PiecewiseControls(np.ones((4, bg.GRAPE_STEPS)), bg.GRAPE_DURATION)
    out = bg.upsample_and_smooth(ctl)
    assert out.n_steps == bg.FINE_STEPS and out.duration == 2.0
    mid = out.values[:, 200:-200]
    assert np.allclose(mid, 1.0, atol=1e-6)
    assert np.all(np.abs(out.values[:, [0, -1]]) < 0.5)


def test_smoothing_impulse_is_gaussian():
    vals = np.zeros((4, bg.FINE_STEPS))
    vals[:, 1000] = 1.0
    out = bg.upsample_and_smooth(bg.PiecewiseControls(vals, 2.0))
    t = out.midpoints
    w = out.values[0] / out.values[0].sum()
    mean = np.sum(w * t)
    sd = np.sqrt(np.sum(w * (t - mean) ** 2))
    assert abs(sd * 1e3 - 11.0) <= 0.5
    assert np.allclose(out.values[0], out.values[3])


def test_smoothing_attenuates_high_frequencies():
    rng = np.random.default_rng(1)
    ctl = bg.PiecewiseControls(rng.normal(size=(4, bg.GRAPE_STEPS)), bg.GRAPE_DURATION)
    rough = bg.upsample_and_smooth(ctl, sigma=0.0)
    smooth = bg.upsample_and_smooth(ctl)
    freqs = np.fft.rfftfreq(bg.FINE_STEPS, d=2.0 / bg.FINE_STEPS)  # cycles per us = MHz
    band = freqs > 40.0
    p_rough = np.sum(np.abs(np.fft.rfft(rough.values, axis=1))[:, band] ** 2)
    p_smooth = np.sum(np.abs(np.fft.rfft(smooth.values, axis=1))[:, band] ** 2)
    assert 10 * np.log10(p_smooth / p_rough) <= -20


def test_smoothing_flattens_endpoints():
    # the 22 ns zero pads are two widths of the kernel, leaving a ~2.5% tail
    rng = np.random.default_rng(2)
    ctl = bg.PiecewiseControls(rng.normal(size=(4, bg.GRAPE_STEPS)), bg.GRAPE_DURATION)
    out = bg.upsample_and_smooth(ctl)
    # bounded by the coarse samples within three kernel widths of each edge
    edges = np.stack([np.abs(ctl.values[:, :3]).max(1), np.abs(ctl.values[:, -3:]).max(1)], 1)
    assert np.all(np.abs(out.values[:, [0, -1]]) <= 0.03 * edges)


# ---------------------------------------------------------------- Krotov

def _converged_small():
    # the state a fixed pulse produces is reached exactly by that pulse
    cfg = bg.GrapeConfig(n_steps=40, duration=1.0, init_amplitude=(1.5, 1.5, 2.0, 2.0))
    ctl = bg.PiecewiseControls(bg.sinusoidal_init(cfg), cfg.duration)
    psi0 = np.zeros(16, dtype=complex)
    psi0[0] = 1.0
    target = forward(ctl.values[None], psi0, 8, SystemParams().chi, ctl.dt).states[0, -1]
    loss, _ = bg.unitary_infidelity(ctl.values, target, 8, SystemParams().chi, ctl.dt, False)
    return target, ctl, [loss]


def test_krotov_without_channels_is_fixed_point():
    target, ctl, trace = _converged_small()
    assert trace[-1] < 1e-12
    _, ktrace = bg.krotov_refine(ctl, target, (), bg.KrotovConfig(max_iter=3))
    assert abs(ktrace[-1] - ktrace[0]) < 1e-6


def test_krotov_is_monotone_under_decoherence():
    target, ctl, _ = _converged_small()
    params = SystemParams()
    out, ktrace = bg.krotov_refine(ctl, target, default_channels(params),
                                   bg.KrotovConfig(max_iter=4, tol=0.0), params)
    assert np.all(np.diff(ktrace) >= -1e-6)
    assert ktrace[-1] >= ktrace[0]
    assert ktrace[-1] == pytest.approx(
        bg.lindblad_final_fidelity(out, target, default_channels(params), params), abs=1e-12)


def test_evaluate_modes_are_ordered():
    target = small_target(0.5, 8)
    cfg = bg.GrapeConfig(max_iter=200, n_steps=40, duration=1.0)
    ctl, trace = bg.grape_optimize(target, cfg)
    kw = dict(n_fock=8)
    s = bg.evaluate_controls(ctl, 0.5, 0.0, "schrodinger", **kw)
    c = bg.evaluate_controls(ctl, 0.5, 0.0, "corrected", **kw)
    lind = bg.evaluate_controls(ctl, 0.5, 0.0, "lindblad", **kw)
    assert s == pytest.approx(1 - trace[-1], abs=1e-12)
    assert c < s and lind < s
    # first-order correction against the full master equation
    assert c == pytest.approx(lind, abs=0.02)
    with pytest.raises(ValueError):
        bg.evaluate_controls(ctl, 0.5, 0.0, "bogus", **kw)


def test_controls_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    ctl = bg.PiecewiseControls(rng.normal(size=(4, 50)), 2.0)
    p = tmp_path / "c.csv"
    bg.write_controls_csv(p, ctl)
    back = bg.read_controls_csv(p, 2.0)
    assert np.array_equal(back.values, ctl.values)
    header = p.read_text().splitlines()[0]
    assert header == "t_ns,reC,imC,reQ,imQ"


def test_timing_json(tmp_path):
    ctl = bg.PiecewiseControls(np.zeros((4, 3)), 1.0)
    res = bg.BaselineResult(1.0, 0.0, 22, ctl, ctl, ctl, [0.5, 0.1], [0.8, 0.9],
                            {"total_s": 1.5})
    p = tmp_path / "t.json"
    bg.write_timing_json(p, res)
    d = json.loads(p.read_text())
    assert d["fidelity"] == 0.9 and d["timings_s"]["total_s"] == 1.5


def test_bad_controls_rejected():
    with pytest.raises(ValueError):
        bg.PiecewiseControls(np.zeros((3, 5)), 1.0)
    with pytest.raises(ValueError):
        bg.GrapeConfig(max_iter=0)
    with pytest.raises(ValueError):
        bg.KrotovConfig(lambda_a=-1.0)
