"""Run configuration: a YAML document validated against a strict schema.

Frequencies are stored as ordinary frequencies (MHz) and converted to angular
units (rad/us) when building :class:`~catcontrol.dynamics.SystemParams`.
Times are in microseconds.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .baseline_grape import GrapeConfig, KrotovConfig
from .controller import CurriculumSchedule, Stage, desk_schedule, paper_schedule
from .dynamics import SystemParams
from .tomography import MeasurementModel


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemSection(_Strict):
    chi_mhz: float = Field(0.2385, gt=0, description="dispersive shift chi / 2 pi, MHz")
    T_q: float = Field(35.0, gt=0, description="qubit decay time, us")
    T_c: float = Field(225.0, gt=0, description="cavity decay time, us")
    T_qphi: float = Field(175.0, gt=0, description="qubit pure dephasing time, us")
    T: float = Field(2.0, gt=0, description="pulse duration, us")
    n_th: float = Field(0.006, ge=0, description="cavity thermal occupation")

    def params(self) -> SystemParams:
        return SystemParams(chi=2 * math.pi * self.chi_mhz, T_q=self.T_q, T_c=self.T_c,
                            T_qphi=self.T_qphi, T=self.T)


class GridSection(_Strict):
    train_intervals: int = Field(40, ge=1)
    test_intervals: int = Field(200, ge=1)


class BasisSection(_Strict):
    n_splines: Literal[11] = 11
    degree: Literal[3] = 3


class StageSection(_Strict):
    batches: int = Field(ge=1)
    alpha_max: float = Field(gt=0)
    n_max: int = Field(ge=1)
    batch_size: int = Field(ge=1)
    pump: bool = False


class CurriculumSection(_Strict):
    preset: Literal["desk", "paper", "custom"] = "desk"
    stages: list[StageSection] | None = None
    lr: float = Field(1e-3, gt=0)
    lr_decay: float = Field(0.5, gt=0)
    pump_tau: float = Field(5.0, gt=0)

    @model_validator(mode="after")
    def _stages_for_custom(self):
        if (self.preset == "custom") != (self.stages is not None):
            raise ValueError("stages must be given exactly when preset is 'custom'")
        return self

    def schedule(self, n_intervals: int) -> CurriculumSchedule:
        if self.preset == "custom":
            stages = tuple(Stage(s.batches, s.alpha_max, s.n_max, s.batch_size, s.pump)
                           for s in self.stages)
        else:
            stages = (desk_schedule() if self.preset == "desk" else paper_schedule()).stages
        return CurriculumSchedule(stages, lr=self.lr, lr_decay=self.lr_decay,
                                  pump_tau=self.pump_tau, n_intervals=n_intervals)


class SamplerSection(_Strict):
    extension: float = Field(0.1, ge=0, lt=1)


class TomographySection(_Strict):
    strategy: Literal["optimal", "uniform"] = "optimal"
    uniform_mode: Literal["iid", "pixels"] = "iid"
    n_samples: int = Field(10000, ge=2)
    mode: Literal["fast", "full"] = "fast"
    contrast: float = Field(1.0, gt=0, le=1)
    p_e: float = Field(0.0, ge=0, le=1)
    parity_dissipation: bool = True
    n_fock: int = Field(31, ge=2)
    heralding_repeats: int = Field(30, ge=1)
    heralding_p0: float = Field(0.80, ge=0, le=1)
    heralding_p1: float = Field(0.45, ge=0, le=1)
    heralding_threshold: int = Field(20, ge=0)

    def model(self, system: SystemSection) -> MeasurementModel:
        return MeasurementModel(contrast=self.contrast, n_th=system.n_th, p_e=self.p_e,
                                system=system.params(),
                                parity_dissipation=self.parity_dissipation)


class BaselineSection(_Strict):
    grape_max_iter: int = Field(500, ge=1)
    grape_tol: float = Field(1e-10, gt=0)
    krotov_max_iter: int = Field(50, ge=1)
    krotov_lambda: float | None = Field(None, gt=0)
    krotov_tol: float = Field(1e-6, gt=0)
    n_fock: int | None = Field(None, ge=2)

    def grape(self, seed: int) -> GrapeConfig:
        return GrapeConfig(max_iter=self.grape_max_iter, tol=self.grape_tol, seed=seed)

    def krotov(self) -> KrotovConfig:
        return KrotovConfig(lambda_a=self.krotov_lambda, max_iter=self.krotov_max_iter,
                            tol=self.krotov_tol)


class RunConfig(_Strict):
    system: SystemSection = SystemSection()
    grid: GridSection = GridSection()
    basis: BasisSection = BasisSection()
    curriculum: CurriculumSection = CurriculumSection()
    sampler: SamplerSection = SamplerSection()
    tomography: TomographySection = TomographySection()
    baseline: BaselineSection = BaselineSection()
    seed: int = Field(0, ge=0)
    output_dir: str = "out"

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _line_of(node, path):
    """Line number (1-based) of the YAML node at ``path``, or of the deepest existing parent."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if not isinstance(node, yaml.MappingNode):
            if isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                node = node.value[key]
                line = node.start_mark.line + 1
                continue
            break
        for k, v in node.value:
            if k.value == str(key):
                node, line = v, k.start_mark.line + 1
                break
        else:
            break
    return line


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Parse and validate a YAML config. Errors carry file, line and field path."""
    if path is None and text is None:
        return RunConfig()
    if text is None:
        with open(path) as fh:
            text = fh.read()
    where = path or "<config>"
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark else ""
        raise ConfigError(f"{where}{line}: invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}:1: top level must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            line = _line_of(node, loc)
            field = ".".join(str(p) for p in loc) or "<root>"
            msgs.append(f"{where}:{line}: {field}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from exc


def apply_env_overrides(cfg: RunConfig) -> RunConfig:
    """CATCONTROL_OUT overrides the output directory (paths only)."""
    out = os.environ.get("CATCONTROL_OUT")
    return cfg.model_copy(update={"output_dir": out}) if out else cfg
