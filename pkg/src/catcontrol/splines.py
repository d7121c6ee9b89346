"""B-spline pulse basis and waveform synthesis."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

N_BASIS = 11
DEGREE = 3
N_ACTIVE = N_BASIS - 2
N_FIELDS = 4
# |coefficient| cap in rad/us
AMPLITUDE_CAP = 2 * np.pi * 10.0


class AmplitudeError(ValueError):
    pass


def knot_sequence(n: int, k: int, T: float) -> np.ndarray:
    """Clamped uniform knots: k+1 zeros, n-k-1 uniform interior knots, k+1 copies of T."""
    interior = np.linspace(0.0, T, n - k + 1)[1:-1]
    return np.concatenate([np.zeros(k + 1), interior, np.full(k + 1, float(T))])


def _eval_all(knots: np.ndarray, n: int, k: int, t: np.ndarray) -> np.ndarray:
    """Values of B_{i,k}(t) for i = 1..n, shape (n, len(t)).

    Built bottom-up from the order-0 indicators; a recursion term with a
    zero knot span contributes 0. At t == T the left limit is used.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    tt = t
    T = knots[-1]
    m = len(knots) - 1
    B = np.zeros((m, t.size))
    for i in range(m):
        B[i] = (knots[i] <= tt) & (tt < knots[i + 1])
    # left limit at t == T: close the last non-empty span on the right
    last = max(i for i in range(m) if knots[i + 1] > knots[i])
    B[last] = np.where(tt == T, 1.0, B[last])
    for d in range(1, k + 1):
        nxt = np.zeros((m - d, t.size))
        for i in range(m - d):
            left = knots[i + d] - knots[i]
            right = knots[i + d + 1] - knots[i + 1]
            if left > 0:
                nxt[i] += (tt - knots[i]) / left * B[i]
            if right > 0:
                nxt[i] += (knots[i + d + 1] - tt) / right * B[i + 1]
        B = nxt
    return B[:n]


@dataclass(frozen=True)
class BSplineBasis:
    n: int
    k: int
    T: float
    knots: np.ndarray = field(repr=False)

    @property
    def active_indices(self) -> np.ndarray:
        """1-based indices of the retained splines (2..n-1)."""
        return np.arange(2, self.n)

    def evaluate_all(self, t) -> np.ndarray:
        """All n basis functions at t, shape (n, len(t))."""
        return _eval_all(self.knots, self.n, self.k, t)

    def evaluate_active(self, t) -> np.ndarray:
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t_arr < 0) or np.any(t_arr > self.T):
            raise ValueError(f"t outside [0, {self.T}]")
        vals = self.evaluate_all(t_arr)[1:-1]
        return vals[:, 0] if np.ndim(t) == 0 else vals


def build_basis(n: int = N_BASIS, k: int = DEGREE, T: float = 2.0) -> BSplineBasis:
    if not (isinstance(n, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise ValueError("n and k must be integers")
    if k < 0 or n <= k:
        raise ValueError(f"need n > k >= 0, got n={n}, k={k}")
    if n < 3:
        raise ValueError("need at least three splines so that one survives edge exclusion")
    if not T > 0:
        raise ValueError("T must be positive")
    knots = knot_sequence(n, k, T)
    knots.setflags(write=False)
    return BSplineBasis(int(n), int(k), float(T), knots)


def evaluate_active(basis: BSplineBasis, t) -> np.ndarray:
    return basis.evaluate_active(t)


def basis_matrix(basis: BSplineBasis, times: np.ndarray) -> np.ndarray:
    """Active-spline values at the given times, shape (n - 2, len(times))."""
    m = basis.evaluate_active(np.asarray(times, dtype=float))
    m.setflags(write=False)
    return m


def check_coefficients(coeffs: np.ndarray, cap: float = AMPLITUDE_CAP) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-2:] != (N_FIELDS, N_ACTIVE):
        raise ValueError(f"coefficients must have trailing shape (4, 9), got {coeffs.shape}")
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("non-finite coefficients")
    if cap is not None and np.abs(coeffs).max(initial=0.0) > cap:
        raise AmplitudeError(f"coefficient magnitude exceeds cap {cap:.3f} rad/us")
    return coeffs


def synthesize(coeffs: np.ndarray, basis: BSplineBasis, times: np.ndarray,
               gains=(1.0, 1.0), cap: float | None = AMPLITUDE_CAP) -> np.ndarray:
    """Real waveforms (Re eps_c, Im eps_c, Re eps_q, Im eps_q) sampled at ``times``.

    ``gains`` scales the cavity and qubit drives respectively.
    """
    coeffs = check_coefficients(coeffs, cap)
    g = np.repeat(np.asarray(gains, dtype=float), 2)[:, None]
    return (g * coeffs) @ basis_matrix(basis, times)


def complex_drives(waveforms: np.ndarray):
    """(eps_c, eps_q) complex arrays from the four real rows."""
    w = np.asarray(waveforms)
    return w[..., 0, :] + 1j * w[..., 1, :], w[..., 2, :] + 1j * w[..., 3, :]


def write_basis_csv(path, basis: BSplineBasis, n_points: int = 401) -> None:
    """Dump (t, B2..B{n-1}) in microseconds for plotting."""
    t = np.linspace(0.0, basis.T, n_points)
    vals = basis.evaluate_active(t)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us"] + [f"B{i}" for i in basis.active_indices])
        for j, tj in enumerate(t):
            w.writerow([repr(float(tj))] + [repr(float(v)) for v in vals[:, j]])
