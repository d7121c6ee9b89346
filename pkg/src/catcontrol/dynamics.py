"""Qubit-cavity time evolution: Schrodinger, Lindblad, and the first-order
decoherence correction to the final-state fidelity.

Units: time in microseconds, rates and drive amplitudes in rad/us.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .hilbert import HilbertConfig, build_operators, overlap_fidelity, target_state
from .splines import N_ACTIVE, BSplineBasis, basis_matrix, build_basis

TWO_PI = 2.0 * np.pi


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SystemParams:
    chi: float = TWO_PI * 0.2385
    T_q: float = 35.0
    T_c: float = 225.0
    T_qphi: float = 175.0
    gamma_up: float = 0.0
    T: float = 2.0

    def __post_init__(self):
        for name in ("chi", "T_q", "T_c", "T_qphi", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gamma_up < 0:
            raise ValueError("gamma_up must be non-negative")

    @property
    def T2(self) -> float:
        return 1.0 / (1.0 / (2.0 * self.T_q) + 1.0 / self.T_qphi)

    def with_T2(self, T2: float) -> "SystemParams":
        """Copy with the pure-dephasing time chosen to give effective coherence time T2."""
        rate = 1.0 / T2 - 1.0 / (2.0 * self.T_q)
        if rate <= 0:
            raise ValueError("T2 exceeds the 2*T_q limit")
        return replace(self, T_qphi=1.0 / rate)

    @property
    def t_parity(self) -> float:
        return np.pi / self.chi


@dataclass(frozen=True)
class TimeGrid:
    n_intervals: int = 40
    T: float = 2.0

    def __post_init__(self):
        if self.n_intervals < 1:
            raise ValueError("n_intervals must be >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.n_intervals

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_intervals + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_intervals) + 0.5) * self.dt

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_intervals + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


TRAIN_GRID = TimeGrid(40)
TEST_GRID = TimeGrid(200)


CHANNEL_KINDS = ("cavity_decay", "qubit_decay", "qubit_dephasing", "pump")


@dataclass(frozen=True)
class DecoherenceChannel:
    kind: str
    tau: float

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel {self.kind!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def rate(self) -> float:
        return 1.0 / self.tau

    def operator(self, n_fock: int) -> np.ndarray:
        return jump_operator(self.kind, n_fock)


def jump_operator(kind: str, n_fock: int) -> np.ndarray:
    ops = build_operators(HilbertConfig(n_fock))
    if kind == "cavity_decay":
        return ops.a
    if kind == "qubit_decay":
        return ops.sigma_minus
    if kind == "qubit_dephasing":
        return ops.sigma_z / np.sqrt(2.0)
    if kind == "pump":
        return ops.sigma_plus
    raise ValueError(kind)


def default_channels(params: SystemParams, pump_tau: float | None = None):
    """Table-I decoherence channels; an incoherent qubit pump is appended if requested."""
    ch = [
        DecoherenceChannel("cavity_decay", params.T_c),
        DecoherenceChannel("qubit_decay", params.T_q),
        DecoherenceChannel("qubit_dephasing", params.T_qphi),
    ]
    if pump_tau is not None:
        ch.append(DecoherenceChannel("pump", pump_tau))
    elif params.gamma_up > 0:
        ch.append(DecoherenceChannel("pump", 1.0 / params.gamma_up))
    return tuple(ch)


def scale_channels(channels, s: float):
    """Channels with all rates multiplied by s (s > 0)."""
    return tuple(DecoherenceChannel(c.kind, c.tau / s) for c in channels)


# --- Hamiltonian -----------------------------------------------------------

@lru_cache(maxsize=32)
def hamiltonian_terms(n_fock: int, chi: float):
    """(H0, [H_reC, H_imC, H_reQ, H_imQ]) with H = H0 + sum_r u_r H_r."""
    ops = build_operators(HilbertConfig(n_fock))
    h0 = -chi * ops.qubit_excited_projector @ ops.n_op
    a, ad = ops.a, ops.a.conj().T
    sp_, sm = ops.sigma_plus, ops.sigma_minus
    hc = np.array([ad + a, 1j * (ad - a), sp_ + sm, 1j * (sp_ - sm)])
    h0.setflags(write=False)
    hc.setflags(write=False)
    return h0, hc


def assemble_hamiltonian(params: SystemParams, eps_c: complex, eps_q: complex,
                         n_fock: int) -> np.ndarray:
    """H/hbar = -chi a^dag a |1><1| + (eps_c a^dag + eps_q sigma_+ + h.c.)."""
    h0, hc = hamiltonian_terms(n_fock, params.chi)
    eps_c, eps_q = complex(eps_c), complex(eps_q)
    u = np.array([eps_c.real, eps_c.imag, eps_q.real, eps_q.imag])
    return h0 + np.tensordot(u, hc, axes=1)


def batched_hamiltonians(u: np.ndarray, n_fock: int, chi: float) -> np.ndarray:
    """u: (..., 4) real controls -> (..., d, d) Hamiltonians."""
    h0, hc = hamiltonian_terms(n_fock, chi)
    return h0 + np.tensordot(u, hc, axes=([-1], [0]))


def interval_eigensystems(u: np.ndarray, n_fock: int, chi: float):
    """Eigendecomposition of each piecewise-constant Hamiltonian; u has shape (..., 4)."""
    return np.linalg.eigh(batched_hamiltonians(u, n_fock, chi))


def propagators_from_eig(evals, evecs, dt: float) -> np.ndarray:
    ph = np.exp(-1j * evals * dt)
    return (evecs * ph[..., None, :]) @ np.swapaxes(evecs.conj(), -1, -2)


def control_samples(coeffs: np.ndarray, grid: TimeGrid, basis: BSplineBasis | None = None,
                    gains=(1.0, 1.0)) -> np.ndarray:
    """Piecewise-constant controls (4, M) taken at interval midpoints."""
    basis = basis or build_basis(T=grid.T)
    g = np.repeat(np.asarray(gains, dtype=float), 2)[:, None]
    return (g * np.asarray(coeffs, dtype=float)) @ basis_matrix(basis, grid.midpoints)


def _as_controls(controls_or_coeffs, grid: TimeGrid) -> np.ndarray:
    c = np.asarray(controls_or_coeffs, dtype=float)
    if c.shape == (4, N_ACTIVE) and grid.n_intervals != N_ACTIVE:
        return control_samples(c, grid)
    if c.shape != (4, grid.n_intervals):
        raise ValueError(f"controls must be (4, {grid.n_intervals}) or spline coefficients (4, 9)")
    return c


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (M + 1, d)
    controls: np.ndarray  # (4, M)
    grid: TimeGrid

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def n_fock(self) -> int:
        return self.states.shape[1] // 2


def propagate_schrodinger(psi0: np.ndarray, coeffs: np.ndarray, grid: TimeGrid,
                          params: SystemParams, norm_tol: float = 1e-7) -> Trajectory:
    """Exact piecewise-constant propagation; ``coeffs`` is (4, 9) spline coefficients
    or (4, M) controls already sampled on the grid."""
    psi0 = np.asarray(psi0, dtype=complex)
    n_fock = psi0.shape[0] // 2
    u = _as_controls(coeffs, grid)
    evals, evecs = interval_eigensystems(u.T, n_fock, params.chi)
    U = propagators_from_eig(evals, evecs, grid.dt)
    states = np.empty((grid.n_intervals + 1, psi0.shape[0]), dtype=complex)
    states[0] = psi0
    n0 = np.linalg.norm(psi0)
    for j in range(grid.n_intervals):
        states[j + 1] = U[j] @ states[j]
        drift = abs(np.linalg.norm(states[j + 1]) - n0)
        if drift > norm_tol:
            raise PropagationError(f"norm drift {drift:.2e} at interval {j}")
    return Trajectory(grid.nodes, states, u, grid)


# --- Lindblad --------------------------------------------------------------

def _sparse(m):
    return sp.csr_matrix(m)


@lru_cache(maxsize=64)
def _sparse_terms(n_fock: int, chi: float):
    h0, hc = hamiltonian_terms(n_fock, chi)
    return _sparse(h0), [_sparse(h) for h in hc]


@lru_cache(maxsize=64)
def _sparse_jumps(n_fock: int, kinds: tuple):
    out = []
    for k in kinds:
        A = _sparse(jump_operator(k, n_fock))
        out.append((A, (A.conj().T @ A).tocsr()))
    return out


class LindbladGenerator:
    """dX/dt = -i[H, X] + sum_i gamma_i D_i[X] (or its Heisenberg adjoint)."""

    def __init__(self, n_fock: int, chi: float, channels=(), extra_h0=None):
        self.n_fock = n_fock
        self.dim = 2 * n_fock
        self.h0, self.hc = _sparse_terms(n_fock, chi)
        if extra_h0 is not None:
            self.h0 = self.h0 + _sparse(extra_h0)
        channels = tuple(channels)
        self.rates = np.array([c.rate for c in channels])
        self.jumps = _sparse_jumps(n_fock, tuple(c.kind for c in channels))
        damp = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for g, (_, ada) in zip(self.rates, self.jumps):
            damp = damp + g * ada
        self.damping = damp.tocsr()

    def h_eff(self, u) -> sp.csr_matrix:
        h = self.h0.copy()
        for ur, hr in zip(u, self.hc):
            if ur != 0.0:
                h = h + ur * hr
        return (h - 0.5j * self.damping).tocsr()

    def rhs(self, rho: np.ndarray, heff: sp.csr_matrix) -> np.ndarray:
        x = heff @ rho
        out = -1j * x + 1j * (heff @ rho.conj().T).conj().T  # -i(H rho - rho H^dag)
        for g, (A, _) in zip(self.rates, self.jumps):
            y = A @ rho
            out += g * (A @ y.conj().T).conj().T
        return out

    def rhs_adjoint(self, obs: np.ndarray, heff: sp.csr_matrix) -> np.ndarray:
        """Heisenberg-picture generator acting on an observable."""
        hd = heff.conj().T.tocsr()
        out = 1j * (hd @ obs) - 1j * (hd @ obs.conj().T).conj().T  # i(H^dag O - O H)
        for g, (A, _) in zip(self.rates, self.jumps):
            Ad = A.conj().T.tocsr()
            y = Ad @ obs
            out += g * (Ad @ y.conj().T).conj().T
        return out


def rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_substeps(heff: sp.csr_matrix, dt: float, substeps: int = 4,
                 max_phase: float | None = 0.1) -> int:
    """Number of RK4 steps for one interval: at least ``substeps``, and enough
    that h * ||H_eff||_inf <= max_phase (None keeps exactly ``substeps``)."""
    if max_phase is None:
        return substeps
    norm = float(abs(heff).sum(axis=1).max()) if heff.nnz else 0.0
    return max(substeps, int(np.ceil(dt * norm / max_phase)))


def propagate_lindblad(rho0: np.ndarray, coeffs: np.ndarray, grid: TimeGrid,
                       channels, params: SystemParams, substeps: int = 4,
                       store: bool = True, trace_tol: float = 1e-6,
                       max_phase: float | None = 0.1):
    """Fixed-step RK4 integration of the master equation with midpoint controls.

    Each interval uses at least ``substeps`` equal RK4 steps, refined so that
    the step times the norm of H_eff stays below ``max_phase``.
    Returns an array (M + 1, d, d) of node states, or only the final state
    when ``store`` is False.
    """
    rho = np.array(rho0, dtype=complex)
    n_fock = rho.shape[0] // 2
    u = _as_controls(coeffs, grid)
    gen = LindbladGenerator(n_fock, params.chi, channels)
    tr0 = np.trace(rho).real
    out = [rho.copy()] if store else None
    for j in range(grid.n_intervals):
        heff = gen.h_eff(u[:, j])
        f = lambda r: gen.rhs(r, heff)  # noqa: E731
        n_sub = rk4_substeps(heff, grid.dt, substeps, max_phase)
        h = grid.dt / n_sub
        for _ in range(n_sub):
            rho = rk4_step(f, rho, h)
            rho = 0.5 * (rho + rho.conj().T)
        drift = abs(np.trace(rho).real - tr0)
        if not drift <= trace_tol:
            raise PropagationError(f"trace drift {drift:.2e} at interval {j}")
        if store:
            out.append(rho.copy())
    return np.array(out) if store else rho


def evolve_constant(x: np.ndarray, gen: LindbladGenerator, u, duration: float,
                    n_steps: int, adjoint: bool = False) -> np.ndarray:
    """Evolve a state (or, with ``adjoint``, an observable) under constant controls."""
    heff = gen.h_eff(u)
    f = (lambda r: gen.rhs_adjoint(r, heff)) if adjoint else (lambda r: gen.rhs(r, heff))
    h = duration / n_steps
    for _ in range(n_steps):
        x = rk4_step(f, x, h)
        x = 0.5 * (x + x.conj().T)
    return x


# --- first-order decoherence correction -----------------------------------

def channel_integrands(states: np.ndarray, A: np.ndarray) -> np.ndarray:
    """|<psi|A|psi>|^2 - <psi|A^dag A|psi> for each row of ``states``."""
    Ap = states @ A.T
    z = np.einsum("...i,...i->...", states.conj(), Ap)
    return np.abs(z) ** 2 - np.einsum("...i,...i->...", Ap.conj(), Ap).real


def decoherence_correction(traj: Trajectory, channels):
    """Per-channel first-order fidelity changes (each <= 0) and their total.

    The corrected fidelity is |<T|psi(T)>|^2 + total.
    """
    w = traj.grid.trapezoid_weights()
    per = {}
    for c in channels:
        f = channel_integrands(traj.states, c.operator(traj.n_fock))
        per[c.kind] = per.get(c.kind, 0.0) + c.rate * float(w @ f)
    return per, float(sum(per.values()))


def corrected_fidelity(alpha, phi, coeffs, grid, params, channels, n_fock: int,
                       max_leakage: float = 1e-6):
    cfg = HilbertConfig(n_fock)
    psi0 = np.zeros(cfg.dim, dtype=complex)
    psi0[0] = 1.0
    traj = propagate_schrodinger(psi0, coeffs, grid, params)
    tgt = target_state(alpha, phi, cfg, max_leakage=max_leakage)
    f0 = overlap_fidelity(traj.final, tgt)
    per, total = decoherence_correction(traj, channels)
    return f0 + total, f0, per


def corrected_loss(alpha, phi, coeffs, grid, params, channels, n_fock: int,
                   max_leakage: float = 1e-6) -> float:
    """1 - (|<T|psi(T)>|^2 + sum_i dF_i)."""
    return 1.0 - corrected_fidelity(alpha, phi, coeffs, grid, params, channels, n_fock,
                                    max_leakage)[0]


def lindblad_fidelity(alpha, phi, coeffs, grid, params, channels, n_fock: int,
                      rho0=None, substeps: int = 4, max_phase: float | None = 0.1) -> float:
    cfg = HilbertConfig(n_fock)
    if rho0 is None:
        rho0 = np.zeros((cfg.dim, cfg.dim), dtype=complex)
        rho0[0, 0] = 1.0
    rho = propagate_lindblad(rho0, coeffs, grid, channels, params, substeps=substeps,
                             store=False, max_phase=max_phase)
    tgt = target_state(alpha, phi, cfg)
    return float(np.real(tgt.conj() @ rho @ tgt))


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Columns: t_us, P(n=0..N) of the cavity, P_qubit_excited."""
    n = traj.n_fock
    pops = np.abs(traj.states) ** 2
    pn = pops[:, :n] + pops[:, n:]
    pe = pops[:, n:].sum(axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us"] + [f"P_n{k}" for k in range(n)] + ["P_qubit_excited"])
        for j, t in enumerate(traj.times):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in pn[j]] + [repr(float(pe[j]))])
