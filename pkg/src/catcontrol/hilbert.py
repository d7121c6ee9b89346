"""Truncated Fock-space algebra for a qubit coupled to a cavity.

Joint states use qubit-major ordering: index = q * n_fock + n, so the
qubit-ground block is ``state[:n_fock]`` and the qubit-excited block is
``state[n_fock:]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

DEFAULT_MAX_LEAKAGE = 1e-6


class TruncationError(ValueError):
    """Raised when a state does not fit inside the retained Fock levels."""


@dataclass(frozen=True)
class HilbertConfig:
    n_fock: int

    def __post_init__(self):
        if int(self.n_fock) != self.n_fock or self.n_fock < 2:
            raise ValueError(f"n_fock must be an integer >= 2, got {self.n_fock!r}")

    @property
    def dim(self) -> int:
        return 2 * self.n_fock

    @property
    def n_max(self) -> int:
        return self.n_fock - 1


@dataclass(frozen=True)
class OperatorSet:
    a: np.ndarray
    n_op: np.ndarray
    sigma_minus: np.ndarray
    sigma_plus: np.ndarray
    sigma_z: np.ndarray
    qubit_excited_projector: np.ndarray


def annihilation(n_fock: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_fock, dtype=float)), k=1).astype(complex)


@lru_cache(maxsize=32)
def _operators(n_fock: int) -> OperatorSet:
    a_c = annihilation(n_fock)
    eye_c = np.eye(n_fock)
    eye_q = np.eye(2)
    sm = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |0><1|
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    pe = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
    ops = OperatorSet(
        a=np.kron(eye_q, a_c),
        n_op=np.kron(eye_q, a_c.conj().T @ a_c),
        sigma_minus=np.kron(sm, eye_c),
        sigma_plus=np.kron(sm.conj().T, eye_c),
        sigma_z=np.kron(sz, eye_c),
        qubit_excited_projector=np.kron(pe, eye_c),
    )
    for m in vars(ops).values():
        m.setflags(write=False)
    return ops


def build_operators(cfg: HilbertConfig) -> OperatorSet:
    """Joint-space ladder and qubit operators (cached, read-only)."""
    if cfg.dim < 2:
        raise ValueError("joint dimension must be at least 2")
    return _operators(cfg.n_fock)


def _coherent_amplitudes(alpha: complex, n_fock: int) -> np.ndarray:
    n = np.arange(n_fock)
    if alpha == 0:
        out = np.zeros(n_fock, dtype=complex)
        out[0] = 1.0
        return out
    r = abs(alpha)
    theta = np.angle(alpha)
    log_mag = -0.5 * r * r + n * np.log(r) - 0.5 * gammaln(n + 1)
    return np.exp(log_mag) * np.exp(1j * theta * n)


def coherent_state(alpha: complex, cfg: HilbertConfig,
                   max_leakage: float = DEFAULT_MAX_LEAKAGE,
                   return_leakage: bool = False):
    """Coherent state |alpha> on the cavity factor, renormalized after truncation.

    The leakage is the norm deficit of the truncated expansion before
    renormalization; above ``max_leakage`` a :class:`TruncationError` is raised.
    """
    c = _coherent_amplitudes(complex(alpha), cfg.n_fock)
    norm2 = float(np.vdot(c, c).real)
    leakage = max(0.0, 1.0 - norm2)
    if leakage > max_leakage:
        raise TruncationError(
            f"coherent state alpha={alpha} leaks {leakage:.2e} beyond n_fock={cfg.n_fock}"
        )
    c = c / np.sqrt(norm2)
    return (c, leakage) if return_leakage else c


def cat_state(alpha: float, phi: float, cfg: HilbertConfig,
              max_leakage: float = DEFAULT_MAX_LEAKAGE) -> np.ndarray:
    """Normalized cavity vector proportional to |alpha> + exp(-i phi) |-alpha>.

    Amplitudes are formed per Fock level as c_n (1 + exp(-i phi) (-1)^n),
    which avoids cancellation for small alpha. When the unnormalized norm
    collapses (alpha -> 0 with phi -> pi) the normalized limit is used.
    """
    c = coherent_state(alpha, cfg, max_leakage=max_leakage)
    parity = (-1.0) ** np.arange(cfg.n_fock)
    v = c * (1.0 + np.exp(-1j * phi) * parity)
    norm2 = float(np.vdot(v, v).real)
    if norm2 < 1e-12:
        v = np.zeros(cfg.n_fock, dtype=complex)
        v[0] = 1.0 + np.exp(-1j * phi)
        v[1] = alpha * (1.0 - np.exp(-1j * phi))
        norm2 = float(np.vdot(v, v).real)
        if alpha == 0 or norm2 < 1e-300:
            v = np.zeros(cfg.n_fock, dtype=complex)
            v[1] = 1.0
            return v
    return v / np.sqrt(norm2)


def cat_norm_analytic(alpha: float, phi: float) -> float:
    """Squared norm of |alpha> + e^{-i phi}|-alpha> using <alpha|-alpha> = e^{-2 alpha^2}."""
    return 2.0 * (1.0 + np.cos(phi) * np.exp(-2.0 * alpha * alpha))


def target_state(alpha: float, phi: float, cfg: HilbertConfig,
                 max_leakage: float = DEFAULT_MAX_LEAKAGE) -> np.ndarray:
    """|0>_q (x) |C_alpha^phi>_c on the joint space."""
    psi = np.zeros(cfg.dim, dtype=complex)
    psi[: cfg.n_fock] = cat_state(alpha, phi, cfg, max_leakage=max_leakage)
    return psi


def ground_state(cfg: HilbertConfig) -> np.ndarray:
    psi = np.zeros(cfg.dim, dtype=complex)
    psi[0] = 1.0
    return psi


def basis_state(q: int, n: int, cfg: HilbertConfig) -> np.ndarray:
    psi = np.zeros(cfg.dim, dtype=complex)
    psi[q * cfg.n_fock + n] = 1.0
    return psi


def overlap_fidelity(psi: np.ndarray, target: np.ndarray) -> float:
    return float(abs(np.vdot(target, psi)) ** 2)


def as_density(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state)
    if state.ndim == 1:
        return np.outer(state, state.conj())
    return state


def qubit_blocks(rho: np.ndarray, n_fock: int):
    """Return (rho_00, rho_11) cavity blocks of a joint density matrix."""
    return rho[:n_fock, :n_fock], rho[n_fock:, n_fock:]


def cavity_reduced(state: np.ndarray, n_fock: int) -> np.ndarray:
    """Partial trace over the qubit of a joint vector or density matrix."""
    rho = as_density(state)
    r00, r11 = qubit_blocks(rho, n_fock)
    return r00 + r11


def photon_distribution(state: np.ndarray, n_fock: int) -> np.ndarray:
    rho = as_density(state)
    if rho.shape[0] == 2 * n_fock:
        rho = cavity_reduced(rho, n_fock)
    return np.real(np.diag(rho)).copy()


def thermal_state(n_th: float, n_fock: int) -> np.ndarray:
    """Diagonal cavity thermal state with mean occupation n_th (truncated, renormalized)."""
    n = np.arange(n_fock)
    if n_th <= 0:
        p = (n == 0).astype(float)
    else:
        p = (n_th / (1.0 + n_th)) ** n / (1.0 + n_th)
        p = p / p.sum()
    return np.diag(p).astype(complex)


# --- displacement and parity ---------------------------------------------

@lru_cache(maxsize=16)
def _quadrature_eig(n_big: int):
    # i (a^dag - a) is Hermitian; a^dag - a = -i V diag(mu) V^dag
    a = annihilation(n_big)
    mu, v = np.linalg.eigh(1j * (a.conj().T - a))
    v.setflags(write=False)
    mu.setflags(write=False)
    return mu, v


def _big_dim(n_fock: int, beta_max: float) -> int:
    return int(n_fock + np.ceil(beta_max ** 2 + 8.0 * beta_max + 20.0))


def displacement(beta: complex, n_fock: int, n_big: int | None = None) -> np.ndarray:
    """Columns 0..n_fock-1 of D(beta) computed in an enlarged Fock space.

    Returns an (n_big, n_fock) matrix. D = R(theta) exp(r (a^dag - a)) R(theta)^dag
    with R(theta) = exp(i theta a^dag a); the real quadrature exponential is
    evaluated exactly through its eigendecomposition.
    """
    r = abs(beta)
    theta = np.angle(beta)
    if n_big is None:
        n_big = _big_dim(n_fock, r)
    mu, v = _quadrature_eig(n_big)
    rot_in = np.exp(-1j * theta * np.arange(n_fock))
    rot_out = np.exp(1j * theta * np.arange(n_big))
    core = (v * np.exp(-1j * r * mu)) @ v[:n_fock, :].conj().T
    return rot_out[:, None] * core * rot_in[None, :]


def _spectral_terms(state: np.ndarray, n_fock: int, tol: float = 1e-13):
    """Decompose a cavity state into weighted vectors sum_i w_i |v_i><v_i|."""
    state = np.asarray(state)
    if state.ndim == 1:
        if state.shape[0] == 2 * n_fock:
            blocks = [state[:n_fock], state[n_fock:]]
            vecs = [b for b in blocks if np.vdot(b, b).real > 0]
            return np.ones(len(vecs)), np.array(vecs).T
        return np.ones(1), state[:, None]
    rho = state
    if rho.shape[0] == 2 * n_fock:
        rho = cavity_reduced(rho, n_fock)
    rho = 0.5 * (rho + rho.conj().T)
    w, v = np.linalg.eigh(rho)
    keep = np.abs(w) > tol * max(1.0, np.abs(w).max())
    return w[keep], v[:, keep]


def _signed_parity(state, n_fock, betas, weights_signs=None, chunk=2048,
                   max_leakage=DEFAULT_MAX_LEAKAGE):
    betas = np.atleast_1d(np.asarray(betas, dtype=complex))
    w, vecs = _spectral_terms(state, n_fock)
    if vecs.shape[0] != n_fock:
        raise ValueError("state dimension does not match n_fock")
    r_max = float(np.abs(betas).max()) if betas.size else 0.0
    n_big = _big_dim(n_fock, r_max)
    mu, v = _quadrature_eig(n_big)
    vh_low = v[:n_fock, :].conj().T  # (n_big, n_fock)
    par = (-1.0) ** np.arange(n_big)
    margin = max(4, n_big // 10)
    n_idx = np.arange(n_fock)
    out = np.empty(betas.shape[0])
    worst = 0.0
    for s in range(0, betas.shape[0], chunk):
        b = -betas[s: s + chunk]  # <Pi(beta)> = Tr(P D(-beta) rho D(-beta)^dag)
        r = np.abs(b)
        th = np.angle(b)
        acc = np.zeros(b.shape[0])
        for wi, vi in zip(w, vecs.T):
            y = vh_low @ (np.exp(-1j * np.outer(n_idx, th)) * vi[:, None])
            z = v @ (np.exp(-1j * np.outer(mu, r)) * y)
            pop = np.abs(z) ** 2
            acc += wi * (par @ pop)
            worst = max(worst, abs(wi) * float(pop[-margin:].sum(axis=0).max()))
        out[s: s + chunk] = acc
    if worst > max_leakage:
        raise TruncationError(f"displaced state leaks {worst:.2e} into the top Fock levels")
    return out


def displaced_parity_expect(state: np.ndarray, beta, n_fock: int | None = None):
    """<Pi(beta)> with Pi(beta) = D(beta) exp(i pi a^dag a) D(-beta).

    ``state`` may be a cavity or joint vector/density matrix; ``n_fock`` must
    be given for joint states (dimension 2 * n_fock). ``beta`` may be a scalar
    or an array; an array of the same shape is returned.
    """
    state = np.asarray(state)
    if n_fock is None:
        n_fock = state.shape[0]
    scalar = np.ndim(beta) == 0
    vals = _signed_parity(state, n_fock, np.ravel(beta))
    return float(vals[0]) if scalar else vals.reshape(np.shape(beta))


def wigner_value(state: np.ndarray, beta, n_fock: int | None = None):
    """W(beta) = 2 <Pi(beta)> / pi."""
    return (2.0 / np.pi) * displaced_parity_expect(state, beta, n_fock=n_fock)


def wigner_grid(state: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                n_fock: int | None = None) -> np.ndarray:
    """Wigner function on a Cartesian grid, indexed [iy, ix]."""
    X, Y = np.meshgrid(xs, ys)
    return wigner_value(state, X + 1j * Y, n_fock=n_fock)


def _joint_terms(state: np.ndarray, n_fock: int, tol: float = 1e-12):
    """Weighted joint vectors with state = sum_i w_i |v_i><v_i|."""
    state = np.asarray(state)
    if state.shape[0] != 2 * n_fock:
        raise ValueError("joint state dimension must be 2 * n_fock")
    if state.ndim == 1:
        return np.ones(1), state[:, None]
    rho = 0.5 * (state + state.conj().T)
    w, v = np.linalg.eigh(rho)
    keep = np.abs(w) > tol * max(1.0, np.abs(w).max())
    return w[keep], v[:, keep]


def displaced_diagonal_expect(state: np.ndarray, betas, diag_blocks: np.ndarray,
                              n_fock: int, chunk: int = 1024,
                              max_leakage: float = DEFAULT_MAX_LEAKAGE,
                              rank_tol: float = 1e-12) -> np.ndarray:
    """Tr(rho D(beta) M D(beta)^dag) for a joint observable M whose qubit blocks
    are diagonal in the Fock basis.

    ``diag_blocks[q, p, n]`` is <q, n|M|p, n> on an enlarged cavity space of
    ``diag_blocks.shape[-1]`` levels; the displacement acts on the cavity only.
    """
    betas = np.atleast_1d(np.asarray(betas, dtype=complex))
    m = np.asarray(diag_blocks)
    n_big = m.shape[-1]
    r_max = float(np.abs(betas).max()) if betas.size else 0.0
    if n_big < _big_dim(n_fock, r_max):
        raise ValueError(f"observable needs at least {_big_dim(n_fock, r_max)} Fock levels")
    w, vecs = _joint_terms(state, n_fock, rank_tol)
    mu, v = _quadrature_eig(n_big)
    vh_low = v[:n_fock, :].conj().T
    margin = max(4, n_big // 10)
    n_idx = np.arange(n_fock)
    out = np.zeros(betas.shape[0])
    worst = 0.0
    for s in range(0, betas.shape[0], chunk):
        b = -betas[s: s + chunk]
        ph_in = np.exp(-1j * np.outer(n_idx, np.angle(b)))
        ph_mid = np.exp(-1j * np.outer(mu, np.abs(b)))
        acc = np.zeros(b.shape[0], dtype=complex)
        for wi, vi in zip(w, vecs.T):
            # the output rotation is common to both blocks and cancels
            z = [v @ (ph_mid * (vh_low @ (ph_in * vi[q * n_fock:(q + 1) * n_fock, None])))
                 for q in (0, 1)]
            for q in (0, 1):
                # leaked population of rho, so weighted by the eigenvalue
                pop = np.abs(z[q]) ** 2
                worst = max(worst, abs(wi) * float(pop[-margin:].sum(axis=0).max()))
                for p in (0, 1):
                    # <v_q| D^dag M_qp D |v_p>
                    acc += wi * np.einsum("k,kb,kb->b", m[q, p], z[q].conj(), z[p])
        out[s: s + chunk] = acc.real
    if worst > max_leakage:
        raise TruncationError(f"displaced state leaks {worst:.2e} into the top Fock levels")
    return out


def parity_blocks(n_big: int, sign_excited: float = -1.0) -> np.ndarray:
    """Diagonal blocks of the ideal two-polarity parity observable.

    The qubit-ground block is the cavity parity; the excited block carries
    ``sign_excited`` times the parity (the readout is flipped there).
    """
    par = (-1.0) ** np.arange(n_big)
    m = np.zeros((2, 2, n_big), dtype=complex)
    m[0, 0] = par
    m[1, 1] = sign_excited * par
    return m


def big_dim(n_fock: int, beta_max: float) -> int:
    """Enlarged Fock dimension used to displace states by up to ``beta_max``."""
    return _big_dim(n_fock, beta_max)
