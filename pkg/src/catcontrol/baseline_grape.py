"""Direct pulse optimization used as the comparison baseline.

Unitary GRAPE on a coarse piecewise-constant grid, linear upsampling with
Gaussian smoothing onto a 1 ns grid, then sequential first-order Krotov
updates under the Lindblad equation.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import minimize

from .dynamics import (LindbladGenerator, SystemParams, TimeGrid, default_channels, jump_operator,
                       rk4_step)
from .gradients import backward, corrected_loss_terms, forward
from .hilbert import HilbertConfig, target_state

GRAPE_STEPS = 163
GRAPE_DURATION = 1.956  # us
FINE_STEPS = 2000
SMOOTH_SIGMA = 0.011  # us


class OptimizationError(RuntimeError):
    pass


def hilbert_dim_for_alpha(alpha: float) -> int:
    """Nearest integer to 16 + 4 alpha + 2 alpha^2."""
    return int(math.floor(16 + 4 * abs(alpha) + 2 * alpha ** 2 + 0.5))


@dataclass
class PiecewiseControls:
    """Four real control rows (Re eps_c, Im eps_c, Re eps_q, Im eps_q), rad/us,
    constant on each interval of a uniform grid starting at ``t0``."""
    values: np.ndarray  # (4, M)
    duration: float
    t0: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != 4:
            raise ValueError("controls must have shape (4, M)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite controls")

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.duration / self.n_steps

    @property
    def midpoints(self) -> np.ndarray:
        return self.t0 + (np.arange(self.n_steps) + 0.5) * self.dt


@dataclass
class GrapeConfig:
    max_iter: int = 500
    tol: float = 1e-10
    init_amplitude: tuple = (1.0, 1.0, 1.0, 1.0)  # rad/us
    init_frequency: tuple = (1.0, 1.5, 2.0, 2.5)  # cycles per pulse
    seed: int = 0
    n_steps: int = GRAPE_STEPS
    duration: float = GRAPE_DURATION

    def __post_init__(self):
        if self.max_iter < 1 or self.n_steps < 1 or not self.duration > 0:
            raise ValueError("invalid GRAPE configuration")


@dataclass
class KrotovConfig:
    lambda_a: float | None = None  # None: chosen from the first update
    max_step: float = 0.5  # rad/us, used only to pick lambda_a automatically
    lambda_min: float = 1.0  # floor for the automatic choice near convergence
    max_iter: int = 50
    tol: float = 1e-6
    monotonic_tol: float = 1e-6
    max_retries: int = 8

    def __post_init__(self):
        if self.lambda_a is not None and not self.lambda_a > 0:
            raise ValueError("lambda_a must be positive")


def sinusoidal_init(cfg: GrapeConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    t = (np.arange(cfg.n_steps) + 0.5) / cfg.n_steps
    phases = rng.uniform(0, 2 * np.pi, 4)
    return np.array([a * np.sin(2 * np.pi * f * t + p)
                     for a, f, p in zip(cfg.init_amplitude, cfg.init_frequency, phases)])


def unitary_infidelity(u: np.ndarray, target: np.ndarray, n_fock: int, chi: float, dt: float,
                       need_grad: bool = True):
    """1 - |<T|psi(T)>|^2 for piecewise-constant controls u (4, M) and its gradient."""
    if not np.all(np.isfinite(u)):
        raise OptimizationError("non-finite GRAPE controls")
    psi0 = np.zeros(2 * n_fock, dtype=complex)
    psi0[0] = 1.0
    rp = forward(u[None], psi0, n_fock, chi, dt)
    final = rp.states[0, -1]
    ov = np.vdot(target, final)
    loss = 1.0 - abs(ov) ** 2
    if not np.isfinite(loss):
        raise OptimizationError("non-finite GRAPE loss")
    if not need_grad:
        return float(loss), None
    g = np.zeros_like(rp.states)
    g[0, -1] = -target * ov
    return float(loss), backward(rp, g, n_fock, chi)[0]


def grape_optimize(target: np.ndarray, config: GrapeConfig = GrapeConfig(),
                   params: SystemParams = SystemParams(), init: np.ndarray | None = None):
    """Minimize the unitary state-transfer infidelity from |0, 0>.

    Returns (PiecewiseControls, loss trace).
    """
    target = np.asarray(target, dtype=complex)
    n_fock = target.shape[0] // 2
    dt = config.duration / config.n_steps
    u0 = sinusoidal_init(config) if init is None else np.asarray(init, dtype=float)
    trace = []

    def fun(x):
        loss, grad = unitary_infidelity(x.reshape(4, -1), target, n_fock, params.chi, dt)
        return loss, grad.ravel()

    def record(xk):
        trace.append(fun(xk)[0])

    trace.append(fun(u0.ravel())[0])
    res = minimize(fun, u0.ravel(), jac=True, method="L-BFGS-B", callback=record,
                   options={"maxiter": config.max_iter, "ftol": config.tol, "gtol": 1e-12})
    if not np.isfinite(res.fun):
        raise OptimizationError("GRAPE diverged")
    return PiecewiseControls(res.x.reshape(4, -1), config.duration), trace


def upsample_and_smooth(controls: PiecewiseControls, n_out: int = FINE_STEPS, T: float = 2.0,
                        sigma: float = SMOOTH_SIGMA) -> PiecewiseControls:
    """Linear interpolation onto n_out uniform steps over [0, T], then Gaussian
    smoothing with zero padding beyond both ends.

    The coarse pulse keeps its own time axis (placed centrally inside [0, T]),
    and is zero outside it.
    """
    t_out = (np.arange(n_out) + 0.5) * T / n_out
    offset = controls.t0 if controls.t0 else 0.5 * (T - controls.duration)
    t_in = offset + controls.midpoints - controls.t0
    vals = np.array([np.interp(t_out, t_in, row, left=0.0, right=0.0) for row in controls.values])
    inside = (t_out >= offset) & (t_out <= offset + controls.duration)
    # hold the end samples flat up to the coarse pulse edges
    for r in range(4):
        lo = inside & (t_out < t_in[0])
        hi = inside & (t_out > t_in[-1])
        vals[r, lo] = controls.values[r, 0]
        vals[r, hi] = controls.values[r, -1]
    if sigma > 0:
        vals = gaussian_filter1d(vals, sigma / (T / n_out), axis=1, mode="constant", cval=0.0)
    return PiecewiseControls(vals, T)


# ---------------------------------------------------------------- Krotov

def _lindblad_states(gen, u, dt, rho0, store=True):
    rho = rho0.copy()
    out = [rho.copy()] if store else None
    for j in range(u.shape[1]):
        heff = gen.h_eff(u[:, j])
        rho = rk4_step(lambda r: gen.rhs(r, heff), rho, dt)
        rho = 0.5 * (rho + rho.conj().T)
        if store:
            out.append(rho.copy())
    return out if store else rho


def _costates(gen, u, dt, chi_T):
    """Heisenberg-evolved projector chi(t_j) = Phi^dag(T, t_j)[chi_T] for all nodes."""
    M = u.shape[1]
    out = [None] * (M + 1)
    x = chi_T.copy()
    out[M] = x.copy()
    for j in range(M - 1, -1, -1):
        heff = gen.h_eff(u[:, j])
        x = rk4_step(lambda r: gen.rhs_adjoint(r, heff), x, dt)
        x = 0.5 * (x + x.conj().T)
        out[j] = x.copy()
    return out


def _krotov_gradient(hc_dense, chi_t, rho):
    """Re Tr(chi (-i [H_r, rho])) for each control Hamiltonian."""
    comm = np.einsum("rij,jk->rik", hc_dense, rho)
    comm = comm - np.swapaxes(comm.conj(), 1, 2)  # H rho - rho H
    return np.real(-1j * np.einsum("ij,rji->r", chi_t, comm))


def krotov_refine(controls: PiecewiseControls, target: np.ndarray, channels,
                  config: KrotovConfig = KrotovConfig(), params: SystemParams = SystemParams()):
    """Sequential first-order Krotov updates maximizing <T|rho(T)|T> under the
    master equation. Returns (PiecewiseControls, fidelity trace).

    If an iteration lowers the fidelity by more than ``monotonic_tol``, it is
    discarded and redone with lambda_a doubled.
    """
    target = np.asarray(target, dtype=complex)
    d = target.shape[0]
    n_fock = d // 2
    gen = LindbladGenerator(n_fock, params.chi, channels)
    hc_dense = np.array([h.toarray() for h in gen.hc])
    dt = controls.dt
    u = controls.values.copy()
    rho0 = np.zeros((d, d), dtype=complex)
    rho0[0, 0] = 1.0
    proj = np.outer(target, target.conj())

    def fidelity(rho):
        return float(np.real(target.conj() @ rho @ target))

    F = fidelity(_lindblad_states(gen, u, dt, rho0, store=False))
    trace = [F]
    lam = config.lambda_a
    for _ in range(config.max_iter):
        chis = _costates(gen, u, dt, proj)
        if lam is None:
            rhos = _lindblad_states(gen, u, dt, rho0)
            g = np.array([_krotov_gradient(hc_dense, chis[j], rhos[j]) for j in range(u.shape[1])])
            lam = max(float(np.abs(g).max()) / config.max_step, config.lambda_min)
        for attempt in range(config.max_retries + 1):
            new = u.copy()
            rho = rho0.copy()
            for j in range(u.shape[1]):
                new[:, j] = u[:, j] + _krotov_gradient(hc_dense, chis[j], rho) / lam
                heff = gen.h_eff(new[:, j])
                rho = rk4_step(lambda r: gen.rhs(r, heff), rho, dt)
                rho = 0.5 * (rho + rho.conj().T)
            F_new = fidelity(rho)
            if not np.isfinite(F_new):
                raise OptimizationError("non-finite fidelity in Krotov update")
            if F_new >= F - config.monotonic_tol:
                break
            lam *= 2.0
        else:
            raise OptimizationError("Krotov update failed to improve the fidelity")
        u = new
        gain = F_new - F
        F = F_new
        trace.append(F)
        if gain < config.tol:
            break
    return PiecewiseControls(u, controls.duration, controls.t0), trace


def lindblad_final_fidelity(controls: PiecewiseControls, target: np.ndarray, channels,
                            params: SystemParams = SystemParams()) -> float:
    d = target.shape[0]
    gen = LindbladGenerator(d // 2, params.chi, channels)
    rho0 = np.zeros((d, d), dtype=complex)
    rho0[0, 0] = 1.0
    rho = _lindblad_states(gen, controls.values, controls.dt, rho0, store=False)
    return float(np.real(target.conj() @ rho @ target))


def evaluate_controls(controls: PiecewiseControls, alpha: float, phi: float, mode: str = "corrected",
                      params: SystemParams = SystemParams(), n_fock: int | None = None,
                      channels=None) -> float:
    """Fidelity of piecewise-constant controls: 'schrodinger' (|<T|psi>|^2),
    'corrected' (first-order decoherence correction) or 'lindblad'."""
    n_fock = n_fock or hilbert_dim_for_alpha(alpha)
    target = target_state(alpha, phi, HilbertConfig(n_fock))
    channels = default_channels(params) if channels is None else channels
    if mode == "lindblad":
        return lindblad_final_fidelity(controls, target, channels, params)
    if mode not in ("schrodinger", "corrected"):
        raise ValueError(f"unknown mode {mode!r}")
    psi0 = np.zeros(2 * n_fock, dtype=complex)
    psi0[0] = 1.0
    rp = forward(controls.values[None], psi0, n_fock, params.chi, controls.dt)
    if mode == "schrodinger":
        return float(abs(np.vdot(target, rp.states[0, -1])) ** 2)
    grid = TimeGrid(controls.n_steps, controls.duration)
    jumps = [jump_operator(c.kind, n_fock) for c in channels]
    loss, _, _, _ = corrected_loss_terms(rp.states, target[None], grid.trapezoid_weights(), jumps,
                                         [c.rate for c in channels])
    return float(1.0 - loss[0])


@dataclass
class BaselineResult:
    alpha: float
    phi: float
    n_fock: int
    grape: PiecewiseControls
    smoothed: PiecewiseControls
    final: PiecewiseControls
    grape_trace: list
    krotov_trace: list
    timings: dict = field(default_factory=dict)

    @property
    def fidelity(self) -> float:
        return self.krotov_trace[-1]


def run_baseline(alpha: float, phi: float, params: SystemParams = SystemParams(),
                 grape_cfg: GrapeConfig = GrapeConfig(), krotov_cfg: KrotovConfig = KrotovConfig(),
                 n_fock: int | None = None, channels=None) -> BaselineResult:
    """GRAPE -> upsample/smooth -> Krotov for one target cat state."""
    n_fock = n_fock or hilbert_dim_for_alpha(alpha)
    target = target_state(alpha, phi, HilbertConfig(n_fock))
    channels = default_channels(params) if channels is None else channels
    t0 = time.perf_counter()
    coarse, gtrace = grape_optimize(target, grape_cfg, params)
    t1 = time.perf_counter()
    smooth = upsample_and_smooth(coarse, T=params.T)
    t2 = time.perf_counter()
    final, ktrace = krotov_refine(smooth, target, channels, krotov_cfg, params)
    t3 = time.perf_counter()
    return BaselineResult(alpha, phi, n_fock, coarse, smooth, final, gtrace, ktrace,
                          {"grape_s": t1 - t0, "smooth_s": t2 - t1, "krotov_s": t3 - t2,
                           "total_s": t3 - t0})


def write_controls_csv(path, controls: PiecewiseControls) -> None:
    """Columns t_ns (interval midpoints), reC, imC, reQ, imQ in rad/us."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ns", "reC", "imC", "reQ", "imQ"])
        for t, col in zip(controls.midpoints * 1e3, controls.values.T):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in col])


def read_controls_csv(path, duration: float = 2.0) -> PiecewiseControls:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return PiecewiseControls(data[:, 1:].T, duration)


def write_timing_json(path, result: BaselineResult) -> None:
    with open(path, "w") as fh:
        json.dump({"alpha": result.alpha, "phi": result.phi, "n_fock": result.n_fock,
                   "fidelity": result.fidelity, "grape_final_infidelity": result.grape_trace[-1],
                   "timings_s": result.timings}, fh, indent=2)
