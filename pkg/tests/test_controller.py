import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import catcontrol.controller as ctl
from catcontrol.controller import (LOG_COLUMNS, MLP, AdamState, CurriculumSchedule, MLPParams,
                                   PulseNetwork, Stage, TaskSampler, TrainingError, adam_step,
                                   desk_schedule, fold_task, generate_pulse, load_weights,
                                   mlp_forward, network_for, paper_schedule, sample_batch,
                                   save_weights, train)
from catcontrol.dynamics import SystemParams, TimeGrid, propagate_schrodinger
from catcontrol.hilbert import HilbertConfig, basis_state, cat_state

NET = MLP()


def model(seed=0):
    return MLPParams(NET, NET.init_params(seed), seed)


def test_architecture_size():
    assert NET.n_params == 3 * 30 + 31 * 60 + 61 * 30 + 31 * 36 == 4896
    W, b = NET.unpack(NET.init_params(0))[1]
    assert W.shape == (60, 30) and np.all(b == 0)


def test_forward_deterministic_and_shape():
    m = model()
    a = mlp_forward(m, 1.2, 0.4)
    assert a.shape == (4, 9)
    assert np.array_equal(a, mlp_forward(m, 1.2, 0.4))


def test_input_jacobian_matches_finite_difference():
    m = model(3)
    J = NET.input_jacobian(m.params, 1.1, 0.7)
    h = 1e-6
    for k, (da, dp) in enumerate([(h, 0), (0, h)]):
        fd = (mlp_forward(m, 1.1 + da, 0.7 + dp) - mlp_forward(m, 1.1 - da, 0.7 - dp)).ravel() / (2 * h)
        assert np.allclose(J[:, k], fd, atol=1e-6)
    assert np.all(np.isfinite(J))


def test_backward_matches_finite_difference():
    m = model(4)
    tasks = [(0.5, 0.2), (1.7, 2.9)]
    G = np.random.default_rng(0).normal(size=(2, 4, 9))
    coeffs, acts = NET.forward_coeffs(m.params, tasks)
    grad = NET.backward_coeffs(m.params, acts, G)
    v = np.random.default_rng(1).normal(size=NET.n_params)
    h = 1e-6
    fp = np.sum(G * NET.forward_coeffs(m.params + h * v, tasks)[0])
    fm = np.sum(G * NET.forward_coeffs(m.params - h * v, tasks)[0])
    assert (fp - fm) / (2 * h) == pytest.approx(grad @ v, rel=1e-7)


def test_sampler_examples():
    s = TaskSampler(2.0, seed=0)
    assert sample_batch(s, 0) == []
    tasks = np.array(sample_batch(TaskSampler(2.0, seed=1), 100_000))
    a_hi = 2.2
    # inverse-CDF oracle: alpha = a_hi sqrt(u) has CDF (x / a_hi)^2
    assert stats.kstest(tasks[:, 0], lambda x: np.clip(x / a_hi, 0, 1) ** 2).pvalue > 0.01
    lo, hi = -0.1 * np.pi, 1.1 * np.pi
    assert tasks[:, 1].min() >= lo and tasks[:, 1].max() <= hi
    counts, _ = np.histogram(tasks[:, 1], bins=20, range=(lo, hi))
    exp = len(tasks) / 20
    assert np.all(np.abs(counts - exp) <= 3 * np.sqrt(exp) + 1)
    with pytest.raises(ValueError):
        TaskSampler(0.0)


def test_adam_hand_calculation():
    st0 = AdamState.zeros(1, lr=0.1)
    st1, p1 = adam_step(st0, np.array([1.0]), np.array([2.0]))
    # m = 0.2, v = 0.004; mhat = 2, vhat = 4; step = 0.1 * 2 / (2 + 1e-8)
    assert st1.t == 1
    assert st1.m[0] == pytest.approx(0.2) and st1.v[0] == pytest.approx(0.004)
    assert p1[0] == pytest.approx(1.0 - 0.1 * 2 / (2 + 1e-8), abs=1e-15)
    st2, p2 = adam_step(st1, p1, np.array([0.0]))
    assert st2.m[0] == pytest.approx(0.18)
    assert st0.t == 0 and st0.m[0] == 0  # inputs untouched


def test_adam_zero_grad_and_zero_lr():
    p = np.arange(5.0)
    st, q = adam_step(AdamState.zeros(5), p, np.zeros(5))
    assert np.array_equal(q, p) and st.t == 1
    st, q = adam_step(AdamState.zeros(5, lr=0.0), p, np.ones(5))
    assert np.array_equal(q, p)
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(3), p, np.ones(5))


def test_schedule_validation():
    assert desk_schedule().total_batches == 4000
    assert paper_schedule().alpha_box == 4.0
    with pytest.raises(ValueError):
        CurriculumSchedule((Stage(10, 2.0, 20, 16), Stage(10, 1.5, 20, 16)))
    with pytest.raises(ValueError):
        CurriculumSchedule((Stage(10, 2.0, 20, 16), Stage(10, 2.0, 20, 16, pump=True)))
    with pytest.raises(ValueError):
        CurriculumSchedule(())


def test_weights_round_trip(tmp_path):
    m = MLPParams(NET, np.random.default_rng(0).normal(size=NET.n_params) / 3, 7, 2, {"note": "x"})
    path = tmp_path / "w.json"
    save_weights(path, m)
    back = load_weights(path)
    assert np.array_equal(back.params, m.params)
    assert back.net == m.net and back.seed == 7 and back.stage == 2 and back.meta == {"note": "x"}
    doc = json.load(open(path))
    assert doc["format"] == "catcontrol-weights" and doc["version"] == 1
    doc["version"] = 99
    json.dump(doc, open(path, "w"))
    with pytest.raises(ValueError):
        load_weights(path)


def test_fold_targets_equivalent():
    cfg = HilbertConfig(30)
    for a, phi in [(1.3, 4.0), (0.7, 5.9), (2.0, 3.5)]:
        fa, fp, sign = fold_task(a, phi)
        assert 0 <= fp <= math.pi and sign == -1
        # C_alpha^{2pi - phi} ~ C_{-alpha}^{phi}
        x = cat_state(a, phi, cfg)
        y = cat_state(-fa, fp, cfg)
        assert abs(np.vdot(x, y)) ** 2 == pytest.approx(1.0, abs=1e-12)
    assert fold_task(-1.0, 0.5) == (1.0, 0.5, -1.0)


def test_cavity_sign_flip_reflects_state():
    n = 20
    c = np.random.default_rng(2).normal(scale=2, size=(4, 9))
    c2 = c.copy()
    c2[:2] *= -1
    P = SystemParams()
    psi0 = basis_state(0, 0, HilbertConfig(n))
    f1 = propagate_schrodinger(psi0, c, TimeGrid(40), P).final
    f2 = propagate_schrodinger(psi0, c2, TimeGrid(40), P).final
    par = np.tile((-1.0) ** np.arange(n), 2)
    assert np.allclose(par * f1, f2, atol=1e-12)


def test_generate_pulse_fast_and_endpoints():
    import time
    m = model()
    t0 = time.perf_counter()
    out = [generate_pulse(m, a, 0.0) for a in np.linspace(0, 2, 21)]
    assert time.perf_counter() - t0 < 1.0
    c, w = out[5]
    assert c.shape == (4, 9) and w.shape == (4, 201)
    assert np.all(w[:, [0, -1]] == 0)


def _tiny_schedule(batches=6):
    return CurriculumSchedule((Stage(batches, 0.6, 6, 2, pump=True), Stage(batches, 0.6, 7, 2)))


def test_train_log_checkpoints_and_reproducibility(tmp_path):
    m1, rows1 = train(_tiny_schedule(), seed=5, log_path=tmp_path / "a.csv",
                      checkpoint_dir=tmp_path / "ck")
    m2, rows2 = train(_tiny_schedule(), seed=5, log_path=tmp_path / "b.csv")
    assert open(tmp_path / "a.csv").read() == open(tmp_path / "b.csv").read()
    assert np.array_equal(m1.params, m2.params)
    header = next(csv.reader(open(tmp_path / "a.csv")))
    assert header == LOG_COLUMNS
    assert [r[5] for r in rows1] == [1] * 6 + [0] * 6
    assert [r[3] for r in rows1] == [7] * 6 + [8] * 6
    assert (tmp_path / "ck" / "stage1.json").exists() and (tmp_path / "ck" / "stage2.json").exists()
    assert m1.stage == 2


def test_resume_matches_uninterrupted_run(tmp_path):
    full, rows = train(_tiny_schedule(), seed=3, checkpoint_dir=tmp_path)
    ck = load_weights(tmp_path / "stage1.json")
    resumed, rrows = train(_tiny_schedule(), seed=3, init=ck, start_stage=1)
    assert np.array_equal(full.params, resumed.params)
    assert rrows == rows[6:]
    with pytest.raises(ValueError):
        train(_tiny_schedule(), seed=3, start_stage=1)


def test_train_aborts_on_non_finite(monkeypatch, tmp_path):
    calls = {"n": 0}
    real = ctl.coefficient_loss_and_grad

    def flaky(coeffs, tasks, cfg, need_grad=True):
        calls["n"] += 1
        losses, g, f = real(coeffs, tasks, cfg, need_grad)
        if calls["n"] > 7:
            g = g * np.nan
        return losses, g, f

    monkeypatch.setattr(ctl, "coefficient_loss_and_grad", flaky)
    with pytest.raises(TrainingError) as exc:
        train(_tiny_schedule(), seed=0, checkpoint_dir=tmp_path)
    assert exc.value.last_checkpoint is not None and exc.value.last_checkpoint.stage == 1


def test_network_for_covers_extended_box():
    net = network_for(desk_schedule())
    x = net.standardize([(0.0, -0.1 * np.pi), (2.42, 1.1 * np.pi)])
    assert np.allclose(x, [[-1, -1], [1, 1]])


def test_estimator_api(tmp_path):
    est = PulseNetwork(schedule=_tiny_schedule(3), seed=1)
    assert est.get_params()["seed"] == 1
    assert clone(est).get_params()["seed"] == 1
    with pytest.raises(NotFittedError):
        est.predict([[1.0, 0.0]])
    est.fit()
    X = np.array([[0.5, 0.0], [1.0, np.pi / 2]])
    pred = est.predict(X)
    assert pred.shape == (2, 36)
    save_weights(tmp_path / "w.json", est.model_)
    again = PulseNetwork.from_weights(tmp_path / "w.json")
    assert np.array_equal(again.predict(X), pred)
    s = est.set_params(n_fock_eval=12, n_intervals_eval=40).score(X)
    assert 0 <= s <= 1
    with pytest.raises(ValueError):
        est.predict(np.ones((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-10, 10))
def test_fold_range(a, phi):
    fa, fp, s = fold_task(a, phi)
    assert fa >= 0 and -1e-12 <= fp <= math.pi + 1e-12 and s in (-1.0, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_sampler_within_extended_range(seed):
    t = np.array(TaskSampler(2.2, seed=seed).sample(50))
    assert t[:, 0].min() >= 0 and t[:, 0].max() <= 2.42
    assert t[:, 1].min() >= -0.1 * np.pi and t[:, 1].max() <= 1.1 * np.pi
