"""Neural pulse controller: MLP, Adam, task sampling and curriculum training.

The network maps (alpha, phi) to the 4x9 spline coefficients of a pulse. It
is trained by feeding its output through the differentiable simulation in
:mod:`catcontrol.gradients`.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_seed, check_tasks
from .dynamics import SystemParams, TimeGrid, default_channels
from .gradients import GradientError, PipelineConfig, coefficient_loss_and_grad
from .splines import N_ACTIVE, N_FIELDS, basis_matrix, build_basis

log = logging.getLogger(__name__)

LAYER_SIZES = (2, 30, 60, 30, 36)
WEIGHTS_FORMAT = "catcontrol-weights"
WEIGHTS_VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


# ---------------------------------------------------------------- network

@dataclass(frozen=True)
class MLP:
    """Dense tanh network with a linear output layer.

    Inputs are standardized as (x - center) / half_width over the training
    box; outputs are multiplied by ``output_scale`` (rad/us) and reshaped to
    4x9 coefficients.
    """
    sizes: tuple = LAYER_SIZES
    center: tuple = (1.21, 0.5 * math.pi)
    half_width: tuple = (1.21, 0.6 * math.pi)
    output_scale: float = 2 * math.pi

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def unpack(self, params: np.ndarray):
        """Views (W, b) per layer; W has shape (fan_out, fan_in)."""
        params = np.asarray(params)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        layers, k = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = params[k:k + a * b].reshape(b, a)
            k += a * b
            layers.append((W, params[k:k + b]))
            k += b
        return layers

    def init_params(self, seed) -> np.ndarray:
        """Fan-balanced uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        params = np.zeros(self.n_params)
        k = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            lim = math.sqrt(6.0 / (a + b))
            params[k:k + a * b] = rng.uniform(-lim, lim, a * b)
            k += a * b + b
        return params

    def standardize(self, tasks) -> np.ndarray:
        x = np.asarray(tasks, dtype=float).reshape(-1, 2)
        return (x - np.asarray(self.center)) / np.asarray(self.half_width)

    def forward(self, params, tasks):
        """Raw 36-vector outputs (already scaled) and activations for backprop."""
        acts = [self.standardize(tasks)]
        layers = self.unpack(params)
        h = acts[0]
        for i, (W, b) in enumerate(layers):
            z = h @ W.T + b
            h = z if i == len(layers) - 1 else np.tanh(z)
            acts.append(h)
        return self.output_scale * h, acts

    def forward_coeffs(self, params, tasks):
        out, acts = self.forward(params, tasks)
        return out.reshape(-1, N_FIELDS, N_ACTIVE), acts

    def backward_coeffs(self, params, acts, dcoeffs) -> np.ndarray:
        """Gradient w.r.t. the flat parameters given dL/dcoeffs (B, 4, 9)."""
        layers = self.unpack(params)
        grad = np.zeros(self.n_params)
        gl = self.unpack(grad)
        delta = self.output_scale * np.asarray(dcoeffs).reshape(len(acts[0]), -1)
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            gW, gb = gl[i]
            gW += delta.T @ acts[i]
            gb += delta.sum(axis=0)
            if i > 0:
                delta = (delta @ W) * (1.0 - acts[i] ** 2)
        return grad

    def input_jacobian(self, params, alpha, phi) -> np.ndarray:
        """d(coeffs)/d(alpha, phi), shape (36, 2), by reverse passes."""
        _, acts = self.forward(params, [(alpha, phi)])
        layers = self.unpack(params)
        J = self.output_scale * np.eye(self.sizes[-1])
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            J = J @ W
            if i > 0:
                J = J * (1.0 - acts[i][0] ** 2)
        return J / np.asarray(self.half_width)


@dataclass
class MLPParams:
    """Trained controller: architecture, flat weights and provenance."""
    net: MLP
    params: np.ndarray
    seed: int = 0
    stage: int = 0
    meta: dict = field(default_factory=dict)

    def coeffs(self, alpha, phi) -> np.ndarray:
        return mlp_forward(self, alpha, phi)


def mlp_forward(model: MLPParams, alpha, phi) -> np.ndarray:
    """Raw network output for one (alpha, phi) as a 4x9 coefficient array."""
    c, _ = model.net.forward_coeffs(model.params, [(float(alpha), float(phi))])
    return c[0]


# ---------------------------------------------------------------- sampling

@dataclass
class TaskSampler:
    """Random (alpha, phi) tasks with density ~ alpha and uniform phi.

    Both ranges are widened by ``extension`` of their width beyond the upper
    edge (alpha) and both edges (phi).
    """
    alpha_max: float = 2.0
    phi_max: float = math.pi
    extension: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.alpha_max <= 0:
            raise ValueError("alpha_max must be positive")
        self.rng = np.random.default_rng(self.seed)

    @property
    def alpha_hi(self) -> float:
        return self.alpha_max * (1.0 + self.extension)

    @property
    def phi_range(self) -> tuple:
        pad = self.extension * self.phi_max
        return (-pad, self.phi_max + pad)

    def sample(self, n: int):
        if n < 0:
            raise ValueError("n must be nonnegative")
        u = self.rng.random(n)
        alpha = self.alpha_hi * np.sqrt(u)
        lo, hi = self.phi_range
        phi = self.rng.uniform(lo, hi, n)
        return list(zip(alpha.tolist(), phi.tolist()))


def sample_batch(sampler: TaskSampler, n: int):
    return sampler.sample(n)


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 1e-3) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """One Adam update; returns new (state, params) and leaves inputs untouched."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape:
        raise ValueError("gradient shape does not match optimizer state")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad ** 2
    mhat = m / (1 - state.beta1 ** t)
    vhat = v / (1 - state.beta2 ** t)
    new = params - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return replace(state, m=m, v=v, t=t), new


# ---------------------------------------------------------------- curriculum

@dataclass(frozen=True)
class Stage:
    batches: int
    alpha_max: float
    n_max: int
    batch_size: int
    pump: bool = False

    @property
    def n_fock(self) -> int:
        return self.n_max + 1


@dataclass(frozen=True)
class CurriculumSchedule:
    stages: tuple
    lr: float = 1e-3
    lr_decay: float = 0.5
    pump_tau: float = 5.0
    n_intervals: int = 40

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        prev = None
        for i, s in enumerate(self.stages):
            if s.batches < 0 or s.batch_size < 1 or s.n_max < 1 or s.alpha_max <= 0:
                raise ValueError(f"stage {i}: invalid values {s}")
            if s.pump and i > 0:
                raise ValueError("the pump may only be active in the first stage")
            if prev is not None and (s.alpha_max < prev.alpha_max or s.n_max < prev.n_max
                                     or s.batch_size < prev.batch_size):
                raise ValueError(f"stage {i}: alpha_max, n_max and batch_size must not decrease")
            prev = s

    @property
    def total_batches(self) -> int:
        return sum(s.batches for s in self.stages)

    @property
    def alpha_box(self) -> float:
        return max(s.alpha_max for s in self.stages)

    def stage_lr(self, i: int) -> float:
        return self.lr * self.lr_decay ** i


def desk_schedule() -> CurriculumSchedule:
    return CurriculumSchedule((
        Stage(1000, 2.0, 20, 16, pump=True),
        Stage(1000, 2.2, 20, 32),
        Stage(2000, 2.2, 30, 64),
    ))


def paper_schedule() -> CurriculumSchedule:
    return CurriculumSchedule((
        Stage(1000, 2.0, 20, 16, pump=True),
        Stage(2000, 2.5, 30, 16),
        Stage(2000, 3.0, 40, 64),
        Stage(3000, 3.5, 50, 64),
        Stage(4000, 4.0, 60, 256),
    ))


def stage1_schedule(pump: bool = True, batches: int = 1000) -> CurriculumSchedule:
    return CurriculumSchedule((Stage(batches, 2.0, 20, 16, pump=pump),))


def network_for(schedule: CurriculumSchedule, output_scale: float = 2 * math.pi,
                extension: float = 0.1) -> MLP:
    """Network whose input standardization covers the schedule's extended box."""
    a_hi = (1 + extension) * schedule.alpha_box
    return MLP(center=(0.5 * a_hi, 0.5 * math.pi),
               half_width=(0.5 * a_hi, (0.5 + extension) * math.pi),
               output_scale=output_scale)


LOG_COLUMNS = ["batch", "mean_loss", "alpha_max", "n_fock", "batch_size", "pump_flag"]


def train(schedule: CurriculumSchedule, seed: int = 0, system: SystemParams | None = None,
          net: MLP | None = None, init: MLPParams | None = None, log_path=None,
          checkpoint_dir=None, progress_every: int = 100, extension: float = 0.1,
          start_stage: int = 0):
    """Run the curriculum. Returns (MLPParams, log rows).

    Each row is (batch, mean_loss, alpha_max, n_fock, batch_size, pump_flag).
    A non-finite loss or gradient raises TrainingError carrying the last
    stage checkpoint.

    With ``start_stage`` > 0, ``init`` must be the checkpoint written after
    stage ``start_stage``; the task sampler is replayed through the finished
    stages, so the result equals an uninterrupted run.
    """
    if not 0 <= start_stage < len(schedule.stages):
        raise ValueError("start_stage out of range")
    if start_stage and init is None:
        raise ValueError("resuming needs the checkpoint of the previous stage")
    system = system or SystemParams()
    net = net or (init.net if init is not None else network_for(schedule, extension=extension))
    params = init.params.copy() if init is not None else net.init_params(seed)
    grid = TimeGrid(schedule.n_intervals, system.T)
    sampler_rng = np.random.SeedSequence(seed).spawn(1)[0]
    sampler = TaskSampler(schedule.stages[0].alpha_max, extension=extension, seed=sampler_rng)
    rows = []
    last_ckpt = init
    batch_no = 0
    fh = open(log_path, "w", newline="") if log_path else None
    writer = csv.writer(fh) if fh else None
    if writer:
        writer.writerow(LOG_COLUMNS)
    for stage in schedule.stages[:start_stage]:
        sampler.alpha_max = stage.alpha_max
        for _ in range(stage.batches):
            sampler.sample(stage.batch_size)
        batch_no += stage.batches
    t0 = time.time()
    try:
        for si, stage in enumerate(schedule.stages):
            if si < start_stage:
                continue
            sampler.alpha_max = stage.alpha_max
            channels = default_channels(system, pump_tau=schedule.pump_tau if stage.pump else None)
            cfg = PipelineConfig(n_fock=stage.n_fock, chi=system.chi, grid=grid,
                                 channels=channels, chunk=16)
            opt = AdamState.zeros(net.n_params, lr=schedule.stage_lr(si))
            for _ in range(stage.batches):
                batch = sampler.sample(stage.batch_size)
                try:
                    coeffs, acts = net.forward_coeffs(params, batch)
                    losses, dcoef, _ = coefficient_loss_and_grad(coeffs, batch, cfg)
                    grad = net.backward_coeffs(params, acts, dcoef / len(batch))
                except GradientError as exc:
                    raise TrainingError(f"batch {batch_no}: {exc}", last_ckpt) from exc
                loss = float(losses.mean())
                if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                    raise TrainingError(f"batch {batch_no}: non-finite loss or gradient", last_ckpt)
                opt, params = adam_step(opt, params, grad)
                row = (batch_no, loss, stage.alpha_max, stage.n_fock, stage.batch_size, int(stage.pump))
                rows.append(row)
                if writer:
                    writer.writerow([row[0], repr(row[1])] + list(row[2:]))
                if progress_every and batch_no % progress_every == 0:
                    log.info("batch %d stage %d loss %.4f (%.0f s)", batch_no, si, loss, time.time() - t0)
                batch_no += 1
            last_ckpt = MLPParams(net, params.copy(), seed, si + 1,
                                  {"batches": batch_no, "schedule": _schedule_dict(schedule)})
            if checkpoint_dir:
                os.makedirs(checkpoint_dir, exist_ok=True)
                save_weights(os.path.join(checkpoint_dir, f"stage{si + 1}.json"), last_ckpt)
    finally:
        if fh:
            fh.close()
    return last_ckpt, rows


def _schedule_dict(schedule: CurriculumSchedule) -> dict:
    return asdict(schedule)


# ---------------------------------------------------------------- inference

def fold_task(alpha: float, phi: float):
    """Map (alpha, phi) to (|alpha|, phi') with phi' in [0, pi] and a cavity sign.

    Uses C_alpha^{2pi - phi} ~ C_{-alpha}^{phi} and that the cavity parity
    flip a -> -a reverses the sign of the cavity drive.
    """
    sign = 1.0
    if alpha < 0:
        alpha, sign = -alpha, -sign
    phi = float(np.mod(phi, 2 * math.pi))
    if phi > math.pi:
        phi = 2 * math.pi - phi
        sign = -sign
    return alpha, phi, sign


def generate_pulse(model: MLPParams, alpha: float, phi: float, grid: TimeGrid | None = None,
                   fold: bool = True):
    """Coefficients and sampled waveforms (4, len(nodes)) for one task."""
    a, p, sign = fold_task(alpha, phi) if fold else (alpha, phi, 1.0)
    c = mlp_forward(model, a, p)
    c[:2] *= sign
    grid = grid or TimeGrid(200)
    w = c @ basis_matrix(build_basis(T=grid.T), grid.nodes)
    return c, w


# ---------------------------------------------------------------- weights file

def save_weights(path, model: MLPParams) -> None:
    doc = {
        "format": WEIGHTS_FORMAT,
        "version": WEIGHTS_VERSION,
        "architecture": {"sizes": list(model.net.sizes), "hidden_activation": "tanh",
                         "output_activation": "linear"},
        "normalization": {"center": list(model.net.center), "half_width": list(model.net.half_width),
                          "output_scale": model.net.output_scale, "output_units": "rad/us"},
        "seed": model.seed,
        "stage": model.stage,
        "meta": model.meta,
        "params": [float(x) for x in model.params],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_weights(path) -> MLPParams:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != WEIGHTS_FORMAT:
        raise ValueError(f"{path}: not a weights file")
    if doc.get("version") != WEIGHTS_VERSION:
        raise ValueError(f"{path}: unsupported weights version {doc.get('version')}")
    norm = doc["normalization"]
    net = MLP(tuple(doc["architecture"]["sizes"]), tuple(norm["center"]),
              tuple(norm["half_width"]), float(norm["output_scale"]))
    params = np.array(doc["params"], dtype=float)
    if params.shape != (net.n_params,):
        raise ValueError(f"{path}: parameter count {params.size} does not match architecture")
    return MLPParams(net, params, int(doc["seed"]), int(doc["stage"]), doc.get("meta", {}))


# ---------------------------------------------------------------- evaluation

def evaluate_model(model: MLPParams, tasks, system: SystemParams | None = None, n_fock: int = 31,
                   grid: TimeGrid | None = None, decoherence: bool = True):
    """Corrected and decoherence-free fidelities of generated pulses.

    Returns (corrected, unitary) arrays over ``tasks``; pulses are folded as in
    :func:`generate_pulse` and evaluated on the dense test grid.
    """
    system = system or SystemParams()
    grid = grid or TimeGrid(200, system.T)
    tasks = [(float(a), float(p)) for a, p in tasks]
    coeffs = np.array([generate_pulse(model, a, p, grid)[0] for a, p in tasks])
    channels = default_channels(system) if decoherence else ()
    cfg = PipelineConfig(n_fock=n_fock, chi=system.chi, grid=grid, channels=channels)
    losses, _, fids = coefficient_loss_and_grad(coeffs, tasks, cfg, need_grad=False)
    return 1.0 - losses, fids


# ---------------------------------------------------------------- estimator API

class PulseNetwork(BaseEstimator):
    """scikit-learn style wrapper: fit trains the curriculum, predict maps
    (alpha, phi) rows to 36 spline coefficients, score is the mean corrected
    fidelity of the generated pulses.
    """

    def __init__(self, schedule="desk", seed=0, n_fock_eval=31, n_intervals_eval=200):
        self.schedule = schedule
        self.seed = seed
        self.n_fock_eval = n_fock_eval
        self.n_intervals_eval = n_intervals_eval

    def _schedule(self) -> CurriculumSchedule:
        if isinstance(self.schedule, CurriculumSchedule):
            return self.schedule
        named = {"desk": desk_schedule, "paper": paper_schedule}
        if self.schedule not in named:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        return named[self.schedule]()

    def fit(self, X=None, y=None, **train_kwargs):
        """Train from scratch. Tasks are sampled internally, so X and y are ignored."""
        check_seed(self.seed)
        self.model_, self.log_ = train(self._schedule(), seed=self.seed, **train_kwargs)
        return self

    @classmethod
    def from_weights(cls, path, **kwargs) -> "PulseNetwork":
        est = cls(**kwargs)
        est.model_ = load_weights(path)
        est.seed = est.model_.seed
        est.log_ = []
        return est

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        tasks = check_tasks(X)
        return np.array([generate_pulse(self.model_, a, p)[0].ravel() for a, p in tasks])

    def score(self, X, y=None, decoherence: bool = True) -> float:
        check_is_fitted(self, "model_")
        tasks = check_tasks(X)
        fid, _ = evaluate_model(self.model_, tasks, n_fock=self.n_fock_eval,
                                grid=TimeGrid(self.n_intervals_eval), decoherence=decoherence)
        return float(np.mean(fid))
