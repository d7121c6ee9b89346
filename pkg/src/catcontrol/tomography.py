"""Simulated Wigner tomography and fidelity estimation.

Each shot measures the displaced parity with two opposite readout polarities;
the difference of the two binary records gives W_exp in {-2/pi, 0, 2/pi}.
Fidelities are estimated by importance-weighted sums over sampled points and
renormalized by a contrast calibrated on the (thermal) vacuum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.linalg import expm
from scipy.stats import binom

from .dynamics import (TEST_GRID, LindbladGenerator, SystemParams, TimeGrid, default_channels,
                       evolve_constant, propagate_lindblad)
from .hilbert import (HilbertConfig, big_dim, cat_state, displaced_diagonal_expect,
                      parity_blocks, thermal_state, wigner_grid, wigner_value)

TWO_OVER_PI = 2.0 / math.pi


class SamplingError(ValueError):
    pass


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------- strategies

def _grid_weights(xs: np.ndarray) -> np.ndarray:
    h = xs[1] - xs[0]
    w = np.full(xs.size, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass
class UniformSquare:
    """Uniform density on the rectangle |Re b| <= dx/2, |Im b| <= dy/2.

    ``mode='iid'`` draws points independently; ``mode='pixels'`` cycles over
    the nx * ny pixel centers in a fixed order, as in a raster measurement.
    """
    dx: float
    dy: float
    nx: int = 21
    ny: int = 51
    mode: str = "iid"
    kind: str = field(default="uniform_square", init=False)

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise SamplingError("square sampling needs dx > 0 and dy > 0")
        if self.mode not in ("iid", "pixels"):
            raise SamplingError(f"unknown mode {self.mode!r}")
        if self.nx < 1 or self.ny < 1:
            raise SamplingError("need at least one pixel")

    @property
    def area(self) -> float:
        return self.dx * self.dy

    def pixel_centers(self) -> np.ndarray:
        xs = (np.arange(self.nx) + 0.5) / self.nx * self.dx - 0.5 * self.dx
        ys = (np.arange(self.ny) + 0.5) / self.ny * self.dy - 0.5 * self.dy
        X, Y = np.meshgrid(xs, ys)
        return (X + 1j * Y).ravel()

    def sample(self, n: int, rng) -> np.ndarray:
        if n < 1:
            raise SamplingError("n must be >= 1")
        if self.mode == "pixels":
            c = self.pixel_centers()
            return c[np.arange(n) % c.size]
        x = rng.uniform(-0.5 * self.dx, 0.5 * self.dx, n)
        y = rng.uniform(-0.5 * self.dy, 0.5 * self.dy, n)
        return x + 1j * y

    def density(self, betas) -> np.ndarray:
        b = np.asarray(betas)
        inside = (np.abs(b.real) <= 0.5 * self.dx) & (np.abs(b.imag) <= 0.5 * self.dy)
        return np.where(inside, 1.0 / self.area, 0.0)

    def importance_weights(self, betas, w_target: np.ndarray) -> np.ndarray:
        """W_target(beta) / p(beta) for the given samples."""
        p = self.density(betas)
        if np.any(p == 0):
            raise SamplingError("sample outside the sampled square")
        return w_target * self.area


@dataclass
class OptimalSampling:
    """Density proportional to |W_target| on the nodes of a square grid.

    Sampling picks a node with probability |W_ij| w_ij / ||W||_1 where w_ij
    are 2-D trapezoid weights, so the estimator is unbiased for the
    trapezoid quadrature of the overlap integral.
    """
    target: np.ndarray  # cavity state vector
    extent: float
    resolution: int = 201
    kind: str = field(default="optimal", init=False)

    def __post_init__(self):
        if self.extent <= 0 or self.resolution < 3:
            raise SamplingError("need extent > 0 and resolution >= 3")
        self.xs = np.linspace(-self.extent, self.extent, self.resolution)
        self.spacing = self.xs[1] - self.xs[0]
        self.W = wigner_grid(self.target, self.xs, self.xs)
        wx = _grid_weights(self.xs)
        self.cell = np.outer(wx, wx)
        mass = np.abs(self.W) * self.cell
        self.norm1 = float(mass.sum())
        if self.norm1 < 1e-9:
            raise SamplingError("target Wigner function has no mass on the grid")
        self.prob = (mass / self.norm1).ravel()
        self.cdf = np.cumsum(self.prob)
        self.cdf[-1] = 1.0

    @classmethod
    def for_cat(cls, alpha: float, phi: float, n_fock: int | None = None,
                resolution: int = 201) -> "OptimalSampling":
        n_fock = n_fock or _target_fock(alpha)
        return cls(cat_state(alpha, phi, HilbertConfig(n_fock)), abs(alpha) + 3.0, resolution)

    def nodes(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.xs)
        return (X + 1j * Y).ravel()

    def sample(self, n: int, rng) -> np.ndarray:
        if n < 1:
            raise SamplingError("n must be >= 1")
        idx = np.searchsorted(self.cdf, rng.random(n), side="right")
        return self.nodes()[np.minimum(idx, self.prob.size - 1)]

    def _index(self, betas) -> np.ndarray:
        b = np.asarray(betas)
        ix = np.rint((b.real + self.extent) / self.spacing).astype(int)
        iy = np.rint((b.imag + self.extent) / self.spacing).astype(int)
        ok = (ix >= 0) & (ix < self.resolution) & (iy >= 0) & (iy < self.resolution)
        if not np.all(ok):
            raise SamplingError("sample outside the sampling grid")
        node = self.xs[ix] + 1j * self.xs[iy]
        if np.any(np.abs(node - b) > 1e-9 * self.spacing):
            raise SamplingError("sample is not a node of the sampling grid")
        return iy * self.resolution + ix

    def density(self, betas) -> np.ndarray:
        """|W_target| / ||W||_1 at grid nodes."""
        idx = self._index(betas)
        return np.abs(self.W.ravel()[idx]) / self.norm1

    def target_values(self, betas) -> np.ndarray:
        return self.W.ravel()[self._index(betas)]

    def importance_weights(self, betas, w_target=None) -> np.ndarray:
        idx = self._index(betas)
        w = self.W.ravel()[idx]
        if np.any(self.prob[idx] == 0):
            raise SamplingError("sample has zero probability under this strategy")
        return np.sign(w) * self.norm1


def _target_fock(alpha: float) -> int:
    return int(max(20, math.ceil(abs(alpha) ** 2 + 8 * abs(alpha) + 15)))


def sample_betas(strategy, n: int, rng) -> np.ndarray:
    return strategy.sample(n, rng)


# ---------------------------------------------------------------- measurement model

def _rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


@dataclass(frozen=True)
class MeasurementModel:
    """Parity-measurement imperfections.

    ``contrast`` scales the parity signal; ``n_th`` is the cavity thermal
    occupation before preparation (used for the contrast normalization and
    initial states); ``p_e`` is an extra incoherent qubit flip before
    tomography. With ``parity_dissipation`` the full mode evolves the
    measurement through a wait of t_par = pi / chi under the Table-I channels.
    """
    contrast: float = 1.0
    n_th: float = 0.006
    p_e: float = 0.0
    system: SystemParams = SystemParams()
    parity_dissipation: bool = True
    drift_amplitude: float = 0.0
    drift_period: int = 10_000

    def __post_init__(self):
        if not 0 < self.contrast <= 1:
            raise ModelError("contrast must lie in (0, 1]")
        if not 0 <= self.n_th < 0.5:
            raise ModelError("n_th must lie in [0, 0.5)")
        if not 0 <= self.p_e <= 1:
            raise ModelError("p_e must lie in [0, 1]")
        if self.drift_amplitude < 0 or self.contrast * (1 + self.drift_amplitude) > 1:
            raise ModelError("drifting contrast must stay within (0, 1]")

    @property
    def t_par(self) -> float:
        return self.system.t_parity

    def contrast_at(self, i: np.ndarray) -> np.ndarray:
        if self.drift_amplitude == 0:
            return np.full(np.shape(i), self.contrast)
        return self.contrast * (1 + self.drift_amplitude * np.sin(2 * np.pi * i / self.drift_period))

    def readout_blocks(self, n_big: int):
        """Fock-diagonal blocks of the excited-readout observables (O+, O-).

        O(pol) = R1^dag Phi_wait^dag(R2^dag P_e R2) R1 with R1 = Rx(pi/2) and
        R2 = Rx(pol * pi/2), then mixed with the p_e flip.
        """
        return _readout_blocks(n_big, self.system, self.parity_dissipation, self.p_e)


def _wait_generator(n_big: int, system: SystemParams, dissipation: bool) -> np.ndarray:
    """Heisenberg generator of the idle wait on Fock-diagonal observables.

    The observable is stored as x[q, p, n] = <q, n|X|p, n>; the generator is
    returned as a dense (4 n_big) x (4 n_big) matrix acting on x.ravel().
    """
    n = np.arange(n_big)
    energy = np.stack([np.zeros(n_big), -system.chi * n])  # H_q(n)
    L = np.zeros((2, 2, n_big, 2, 2, n_big), dtype=complex)
    kappa = 1.0 / system.T_c if dissipation else 0.0
    g_down = 1.0 / system.T_q if dissipation else 0.0
    g_phi = 1.0 / system.T_qphi if dissipation else 0.0
    for q in (0, 1):
        for p in (0, 1):
            d = 1j * (energy[q] - energy[p])
            # cavity decay: a^dag X a - {a^dag a, X} / 2
            d = d - kappa * n
            # qubit decay: - {|1><1|, X} / 2
            d = d - 0.5 * g_down * ((q == 1) + (p == 1))
            # dephasing with sigma_z / sqrt(2): off-diagonal blocks decay
            if q != p:
                d = d - g_phi
            L[q, p, n, q, p, n] += d
            L[q, p, n[1:], q, p, n[:-1]] += kappa * n[1:]
    # qubit decay feeds the excited block from the ground block: sigma_+ X sigma_-
    L[1, 1, n, 0, 0, n] += g_down
    return L.reshape(4 * n_big, 4 * n_big)


def _rotate_blocks(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    """R^dag X R for a qubit rotation R acting on Fock-diagonal blocks."""
    return np.einsum("aq,abn,bp->qpn", r.conj(), x, r)


@lru_cache(maxsize=32)
def _readout_blocks(n_big: int, system: SystemParams, dissipation: bool, p_e: float):
    prop = expm(_wait_generator(n_big, system, dissipation) * system.t_parity)
    r1 = _rx(math.pi / 2)
    flip = np.array([[0, 1], [1, 0]], dtype=complex)
    out = []
    for pol in (+1, -1):
        x = np.zeros((2, 2, n_big), dtype=complex)
        x[1, 1] = 1.0  # excited-state readout
        x = _rotate_blocks(x, _rx(pol * math.pi / 2))
        x = (prop @ x.ravel()).reshape(2, 2, n_big)
        x = _rotate_blocks(x, r1)
        x = (1 - p_e) * x + p_e * _rotate_blocks(x, flip)
        out.append(x)
    return out[0], out[1]


def readout_blocks_dense(n_big: int, system: SystemParams, dissipation: bool = True,
                         pol: int = 1, n_steps: int | None = None) -> np.ndarray:
    """Reference construction of one readout observable by RK4 Heisenberg
    evolution of the full matrix; returns the same block layout."""
    channels = default_channels(system) if dissipation else ()
    gen = LindbladGenerator(n_big, system.chi, channels)
    n_steps = n_steps or int(math.ceil(system.t_parity * system.chi * n_big / 0.05))
    eye = np.eye(n_big)
    pe = np.kron(np.diag([0.0, 1.0]), eye).astype(complex)
    r2 = np.kron(_rx(pol * math.pi / 2), eye)
    r1 = np.kron(_rx(math.pi / 2), eye)
    obs = evolve_constant(r2.conj().T @ pe @ r2, gen, np.zeros(4), system.t_parity,
                          n_steps, adjoint=True)
    obs = r1.conj().T @ obs @ r1
    return np.array([[np.diag(obs[q * n_big:(q + 1) * n_big, p * n_big:(p + 1) * n_big])
                      for p in (0, 1)] for q in (0, 1)])


def _as_joint(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    if rho.shape[0] % 2:
        raise ModelError("joint density matrix must have even dimension")
    return rho


def parity_signal(rho: np.ndarray, betas, model: MeasurementModel, mode: str = "fast",
                  rank_tol: float = 1e-10):
    """(P(r+ = 1), P(r- = 1)) for each beta.

    Eigen-components of rho below ``rank_tol`` (relative) are dropped.
    """
    rho = _as_joint(rho)
    n_fock = rho.shape[0] // 2
    betas = np.atleast_1d(np.asarray(betas, dtype=complex))
    n_big = big_dim(n_fock, float(np.abs(betas).max()))
    if mode == "fast":
        s = displaced_diagonal_expect(rho, betas, parity_blocks(n_big), n_fock, rank_tol=rank_tol)
        s = (1 - 2 * model.p_e) * s
        p_plus, p_minus = 0.5 * (1 + model.contrast * s), 0.5 * (1 - model.contrast * s)
    elif mode == "full":
        o_plus, o_minus = model.readout_blocks(n_big)
        tr = np.trace(rho).real
        pp = displaced_diagonal_expect(rho, betas, o_plus, n_fock, rank_tol=rank_tol)
        pm = displaced_diagonal_expect(rho, betas, o_minus, n_fock, rank_tol=rank_tol)
        c = model.contrast
        p_plus, p_minus = c * pp + (1 - c) * 0.5 * tr, c * pm + (1 - c) * 0.5 * tr
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for p in (p_plus, p_minus):
        if np.any(p < -1e-9) or np.any(p > 1 + 1e-9):
            raise ModelError("readout probability outside [0, 1]")
    return np.clip(p_plus, 0, 1), np.clip(p_minus, 0, 1)


def simulate_parity_outcome(rho: np.ndarray, betas, model: MeasurementModel, rng,
                            mode: str = "fast", contrast_scale=None):
    """Differenced outcomes W_exp = (2/pi)(r+ - r-) for each beta."""
    p_plus, p_minus = parity_signal(rho, betas, model, mode)
    if contrast_scale is not None:
        k = np.asarray(contrast_scale)
        p_plus, p_minus = 0.5 + k * (p_plus - 0.5), 0.5 + k * (p_minus - 0.5)
    r_plus = rng.random(p_plus.shape) < p_plus
    r_minus = rng.random(p_minus.shape) < p_minus
    out = TWO_OVER_PI * (r_plus.astype(float) - r_minus.astype(float))
    return float(out[0]) if np.ndim(betas) == 0 else out


def vacuum_state(n_fock: int, n_th: float) -> np.ndarray:
    """Qubit ground, cavity thermal with occupation n_th."""
    rho = np.zeros((2 * n_fock, 2 * n_fock), dtype=complex)
    rho[:n_fock, :n_fock] = thermal_state(n_th, n_fock)
    return rho


def calibrate_contrast(model: MeasurementModel, n: int, rng, mode: str = "fast",
                       n_fock: int = 12) -> float:
    """Contrast estimate from n interleaved vacuum measurements at beta = 0."""
    rho = vacuum_state(n_fock, model.n_th)
    k = model.contrast_at(np.arange(n)) / model.contrast
    w = simulate_parity_outcome(rho, np.zeros(n), model, rng, mode, contrast_scale=k)
    return estimate_contrast(w, model.n_th)


def estimate_contrast(w_vacuum, n_th: float) -> float:
    """c = mean(r+ - r-) / (1 - 2 n_th) from differenced vacuum outcomes."""
    w = np.asarray(w_vacuum, dtype=float) / TWO_OVER_PI
    return float(w.mean() / (1 - 2 * n_th))


def expected_contrast(model: MeasurementModel, mode: str = "fast", n_fock: int = 12) -> float:
    rho = vacuum_state(n_fock, model.n_th)
    p_plus, p_minus = parity_signal(rho, np.zeros(1), model, mode)
    return float((p_plus - p_minus)[0] / (1 - 2 * model.n_th))


# ---------------------------------------------------------------- estimators

@dataclass
class FidelityEstimate:
    value: float
    stderr: float
    n_samples: int
    strategy: str
    contrast: float


def target_wigner(target: np.ndarray, betas) -> np.ndarray:
    return wigner_value(target, betas)


def estimate_fidelity(betas, outcomes, strategy, contrast: float = 1.0,
                      target: np.ndarray | None = None) -> FidelityEstimate:
    """F = pi / (c N) sum_i W_t(b_i) / p(b_i) * W_exp(b_i)."""
    betas = np.asarray(betas, dtype=complex)
    outcomes = np.asarray(outcomes, dtype=float)
    if betas.shape != outcomes.shape or betas.size == 0:
        raise SamplingError("need matching, nonempty sample and outcome arrays")
    if not contrast > 0:
        raise ValueError("contrast must be positive")
    if strategy.kind == "optimal":
        iw = strategy.importance_weights(betas)
    else:
        if target is None:
            raise ValueError("uniform sampling needs the target state")
        iw = strategy.importance_weights(betas, _wigner_at(target, betas))
    terms = math.pi * iw * outcomes / contrast
    n = terms.size
    stderr = float(terms.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return FidelityEstimate(float(terms.mean()), stderr, n, strategy.kind, float(contrast))


def _wigner_at(target, betas):
    uniq, inv = np.unique(betas, return_inverse=True)
    return wigner_value(target, uniq)[inv.ravel()]


def run_tomography(rho: np.ndarray, strategy, n: int, model: MeasurementModel, rng,
                   mode: str = "fast", target: np.ndarray | None = None,
                   n_contrast: int | None = None):
    """Sample points, simulate outcomes and calibrate the contrast.

    Returns (betas, outcomes, contrast_estimate, FidelityEstimate).
    """
    betas = strategy.sample(n, rng)
    k = model.contrast_at(np.arange(n)) / model.contrast
    outcomes = np.empty(n)
    uniq, inv = np.unique(betas, return_inverse=True)
    p_plus, p_minus = parity_signal(rho, uniq, model, mode)
    p_plus, p_minus = p_plus[inv.ravel()], p_minus[inv.ravel()]
    p_plus, p_minus = 0.5 + k * (p_plus - 0.5), 0.5 + k * (p_minus - 0.5)
    outcomes = TWO_OVER_PI * ((rng.random(n) < p_plus).astype(float)
                              - (rng.random(n) < p_minus).astype(float))
    c = calibrate_contrast(model, n_contrast or n, rng, mode)
    est = estimate_fidelity(betas, outcomes, strategy, c, target)
    return betas, outcomes, c, est


def expected_estimate(rho: np.ndarray, target: np.ndarray, model: MeasurementModel,
                      mode: str = "full", extent: float | None = None,
                      spacing: float = 0.15, contrast: float | None = None) -> float:
    """Infinite-sample limit of the estimator: pi / c * integral W_t E[W_exp] d^2 beta.

    The integral is a 2-D trapezoid sum on a square grid, restricted to the
    points where |W_t| is non-negligible.
    """
    rho = _as_joint(rho)
    n_t = target.shape[0]
    if extent is None:
        amp = math.sqrt(max(float(np.vdot(target, np.arange(n_t) * target).real), 0.0))
        extent = amp + 3.5
    n_pts = int(2 * math.ceil(extent / spacing)) + 1
    xs = np.linspace(-extent, extent, n_pts)
    wx = _grid_weights(xs)
    Wt = wigner_grid(target, xs, xs)
    X, Y = np.meshgrid(xs, xs)
    wt = (Wt * np.outer(wx, wx)).ravel()
    keep = np.abs(wt) > 1e-12 * np.abs(wt).max()
    betas = (X + 1j * Y).ravel()[keep]
    p_plus, p_minus = parity_signal(rho, betas, model, mode)
    ew = TWO_OVER_PI * (p_plus - p_minus)
    c = expected_contrast(model, mode) if contrast is None else contrast
    return float(math.pi * (wt[keep] @ ew) / c)


def estimator_bias(rho_joint: np.ndarray, target_cavity: np.ndarray):
    """(F, F1, F') with F = <psi|rho_00|psi>, F1 = <psi|rho_11|psi>, F' = F - F1."""
    rho = _as_joint(rho_joint)
    n = rho.shape[0] // 2
    r00, r11 = rho[:n, :n], rho[n:, n:]
    p0 = float(np.trace(r00).real)
    if p0 < 1e-9:
        raise ModelError("qubit ground-state probability is zero")
    psi = np.asarray(target_cavity)
    F = float(np.vdot(psi, r00 @ psi).real)
    F1 = float(np.vdot(psi, r11 @ psi).real)
    return F, F1, F - F1


# ---------------------------------------------------------------- heralding

@dataclass(frozen=True)
class HeraldingSpec:
    n_repeats: int = 30
    p0: float = 0.80
    p1: float = 0.45
    threshold: int = 20

    def __post_init__(self):
        if not 0 <= self.p1 <= self.p0 <= 1:
            raise ValueError("need 0 <= p1 <= p0 <= 1")
        if self.n_repeats < 0 or self.threshold < 0:
            raise ValueError("counts must be nonnegative")


def heralding_probabilities(spec: HeraldingSpec = HeraldingSpec()):
    """(P(R >= threshold | ground), P(R >= threshold | excited)) for R ~ Binomial(n, p)."""
    k = spec.threshold - 1
    return (float(binom.sf(k, spec.n_repeats, spec.p0)),
            float(binom.sf(k, spec.n_repeats, spec.p1)))


def binomial_tail_exact(n: int, p: Fraction, threshold: int) -> Fraction:
    """Exact rational P(R >= threshold)."""
    p = Fraction(p)
    return sum((Fraction(math.comb(n, r)) * p ** r * (1 - p) ** (n - r)
                for r in range(max(threshold, 0), n + 1)), Fraction(0))


# ---------------------------------------------------------------- error budget

def prepare_state(coeffs, params: SystemParams, n_fock: int, n_th: float = 0.0,
                  channels=None, grid: TimeGrid = TEST_GRID, substeps: int = 4) -> np.ndarray:
    """Lindblad evolution of (thermal cavity, qubit ground) under a pulse."""
    if channels is None:
        channels = default_channels(params)
    rho0 = vacuum_state(n_fock, n_th)
    return propagate_lindblad(rho0, coeffs, grid, channels, params, substeps=substeps,
                              store=False)


def error_budget(alpha: float, phi: float, coeffs, params: SystemParams,
                 model: MeasurementModel, n_fock: int, grid: TimeGrid = TEST_GRID,
                 spacing: float = 0.15, prep_channels=None) -> dict:
    """Fidelity changes from removing, one at a time, the thermal population,
    the dissipation during the parity wait and the residual qubit excitation.

    Each entry is F_without - F_baseline, where F is the expected estimator
    output of the full measurement model.
    """
    target = cat_state(alpha, phi, HilbertConfig(n_fock))
    rho_th = prepare_state(coeffs, params, n_fock, model.n_th, prep_channels, grid)
    rho_0 = prepare_state(coeffs, params, n_fock, 0.0, prep_channels, grid) \
        if model.n_th > 0 else rho_th

    def measured(rho, m):
        return expected_estimate(rho, target, m, "full", spacing=spacing)

    base = measured(rho_th, model)
    no_th = measured(rho_0, replace(model, n_th=0.0))
    no_dissip = measured(rho_th, replace(model, parity_dissipation=False))
    reset = rho_th.copy()
    reset[n_fock:, :] = 0.0
    reset[:, n_fock:] = 0.0
    no_ex = measured(reset, model)
    F, F1, Fp = estimator_bias(rho_0, target)
    out = {
        "alpha": alpha, "phi": phi,
        "F_measured": base,
        "F_true": F,
        "F1": F1,
        "dF_th": no_th - base,
        "dF_dissip": no_dissip - base,
        "dF_ex": no_ex - base,
    }
    out["total"] = out["dF_th"] + out["dF_dissip"] + out["dF_ex"]
    return out


def t2_sweep(coeffs_for, alphas, T2_values=(42.0, 50.0, 60.0), params: SystemParams = SystemParams(),
             n_fock: int = 31, grid: TimeGrid = TEST_GRID, phi: float = 0.0) -> list:
    """Simulated Lindblad fidelities for each (T2, alpha); ``coeffs_for(alpha, phi)`` gives pulses."""
    rows = []
    for T2 in T2_values:
        p = params.with_T2(T2)
        for a in alphas:
            rho = prepare_state(coeffs_for(a, phi), p, n_fock, 0.0, default_channels(p), grid)
            t = cat_state(a, phi, HilbertConfig(n_fock))
            F = float(np.vdot(t, rho[:n_fock, :n_fock] @ t).real)
            rows.append({"T2": T2, "alpha": float(a), "phi": phi, "fidelity": F})
    return rows


# ---------------------------------------------------------------- file outputs

def write_samples_csv(path, betas, outcomes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re_beta", "im_beta", "outcome"])
        for b, o in zip(np.asarray(betas), np.asarray(outcomes)):
            w.writerow([repr(float(b.real)), repr(float(b.imag)), repr(float(o))])


def read_samples_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0] + 1j * data[:, 1], data[:, 2]


def binned_wigner(betas, outcomes, extent: float, bins: int = 100, contrast: float = 1.0):
    """Mean of W_exp / c in bins x bins square cells; empty cells are NaN."""
    b = np.asarray(betas)
    edges = np.linspace(-extent, extent, bins + 1)
    s, _, _ = np.histogram2d(b.imag, b.real, bins=[edges, edges], weights=np.asarray(outcomes))
    cnt, _, _ = np.histogram2d(b.imag, b.real, bins=[edges, edges])
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s / cnt / contrast
    centers = 0.5 * (edges[1:] + edges[:-1])
    return centers, mean, cnt


def write_wigner_map_csv(path, betas, outcomes, extent: float, bins: int = 100,
                         contrast: float = 1.0) -> None:
    centers, mean, cnt = binned_wigner(betas, outcomes, extent, bins, contrast)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re_beta", "im_beta", "mean_w", "count"])
        for iy, y in enumerate(centers):
            for ix, x in enumerate(centers):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(mean[iy, ix])),
                            int(cnt[iy, ix])])
