"""Experiment configuration: one JSON document, validated field by field."""

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigError, DualKFError
from ..optimizer import StepPolicy
from ..sysmodel import SystemModel, mass_spring_model

MODES = ("simulate", "kalman", "gd", "gf", "sgd", "grad-check", "check-duality", "sweep")
MODEL_KINDS = ("mass_spring", "scalar", "inline")

# Grid and budget defaults are artifact choices; every output lists the ones left untouched.
DEFAULT_T_GRID = (10, 50, 200)
DEFAULT_M_GRID = (16, 64, 256)
DEFAULT_K = 2000
DEFAULT_NUM_SEEDS = 20

_STEP_DEFAULTS = {
    "gd": {"kind": "backtracking", "eta0": 1.0},
    "sgd": {"kind": "decaying", "eta0": 0.05},
    "sweep": {"kind": "decaying", "eta0": 0.05},
}


def _default_model():
    return {"kind": "mass_spring"}


@dataclass
class ExperimentConfig:
    mode: str = "sgd"
    model: dict = field(default_factory=_default_model)
    T_grid: list = field(default_factory=lambda: list(DEFAULT_T_GRID))
    M_grid: list = field(default_factory=lambda: list(DEFAULT_M_GRID))
    num_seeds: int = DEFAULT_NUM_SEEDS
    seed0: int = 0
    K: int = DEFAULT_K
    step: dict = field(default_factory=dict)
    L0: list | None = None
    burn_in: int | None = None
    grad_tol: float = 1e-9
    max_iter: int = 1000
    step_h: float = 0.1
    num_samples: int = 10_000
    direction: list | None = None
    oracle: bool = True
    plots: bool = True
    out_dir: str = "results"

    def __post_init__(self):
        self.validate()

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown field(s) {unknown}", path=unknown[0])
        return cls(**copy.deepcopy(data))

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config ({exc})", path="--config") from exc
        return cls.from_json(text)

    def to_dict(self):
        return copy.deepcopy(asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def override(self, **changes):
        """Copy with top-level fields replaced; ``None`` values are ignored."""
        data = self.to_dict()
        for key, value in changes.items():
            if value is None:
                continue
            if key not in data:
                raise ConfigError("unknown field", path=key)
            data[key] = value
        return ExperimentConfig.from_dict(data)

    def untouched_defaults(self):
        """Names of artifact-default fields still at their default values."""
        out = []
        if list(self.T_grid) == list(DEFAULT_T_GRID):
            out.append("T_grid")
        if list(self.M_grid) == list(DEFAULT_M_GRID):
            out.append("M_grid")
        if self.K == DEFAULT_K:
            out.append("K")
        if self.num_seeds == DEFAULT_NUM_SEEDS:
            out.append("num_seeds")
        if not self.step and self.mode in _STEP_DEFAULTS:
            out.append("step")
        return out

    # -- validation --------------------------------------------------------

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {list(MODES)}, got {self.mode!r}", path="mode")
        self._check_model()
        for name in ("T_grid", "M_grid"):
            grid = getattr(self, name)
            if not isinstance(grid, (list, tuple)) or len(grid) == 0:
                raise ConfigError("must be a nonempty list", path=name)
            for i, v in enumerate(grid):
                if not _is_int(v) or v < 1:
                    raise ConfigError(f"must be a positive integer, got {v!r}", path=f"{name}[{i}]")
            setattr(self, name, [int(v) for v in grid])
        for name, low in (("num_seeds", 1), ("seed0", 0), ("K", 0), ("max_iter", 0), ("num_samples", 1)):
            v = getattr(self, name)
            if not _is_int(v) or v < low:
                raise ConfigError(f"must be an integer >= {low}, got {v!r}", path=name)
        if self.burn_in is not None and (not _is_int(self.burn_in) or self.burn_in < 0):
            raise ConfigError(f"must be a nonnegative integer or null, got {self.burn_in!r}", path="burn_in")
        for name in ("grad_tol", "step_h"):
            v = getattr(self, name)
            if not _is_real(v) or not v > 0:
                raise ConfigError(f"must be a positive number, got {v!r}", path=name)
        for name in ("oracle", "plots"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError("must be true or false", path=name)
        if not isinstance(self.out_dir, str) or not self.out_dir:
            raise ConfigError("must be a nonempty string", path="out_dir")
        self._check_step()
        for name in ("L0", "direction"):
            v = getattr(self, name)
            if v is None:
                continue
            try:
                arr = np.asarray(v, dtype=float)
            except (TypeError, ValueError) as exc:
                raise ConfigError("must be a numeric matrix", path=name) from exc
            if not np.all(np.isfinite(arr)):
                raise ConfigError("has non-finite entries", path=name)
        if self.mode in ("gd", "gf", "grad-check") and not self.oracle:
            raise ConfigError("exact-gradient modes need the model covariances; use --oracle", path="oracle")

    def _check_model(self):
        desc = self.model
        if not isinstance(desc, dict):
            raise ConfigError("must be an object", path="model")
        kind = desc.get("kind")
        if kind not in MODEL_KINDS:
            raise ConfigError(f"must be one of {list(MODEL_KINDS)}, got {kind!r}", path="model.kind")
        try:
            self.build_model()
        except ConfigError:
            raise
        except (DualKFError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc), path="model") from exc

    def _check_step(self):
        if not isinstance(self.step, dict):
            raise ConfigError("must be an object", path="step")
        allowed = {"kind", "eta0", "backtrack_factor", "armijo_c", "decay_exponent"}
        for key, value in self.step.items():
            if key not in allowed:
                raise ConfigError("unknown field", path=f"step.{key}")
            if key != "kind" and not _is_real(value):
                raise ConfigError(f"must be a number, got {value!r}", path=f"step.{key}")
        try:
            self.step_policy()
        except DualKFError as exc:
            raise ConfigError(str(exc), path="step") from exc

    # -- derived objects ---------------------------------------------------

    def build_model(self):
        desc = dict(self.model)
        kind = desc.pop("kind")
        if kind == "mass_spring":
            allowed = {"dt", "omega", "q_var", "r_var", "p0_var"}
            bad = sorted(set(desc) - allowed)
            if bad:
                raise ConfigError("unknown field", path=f"model.{bad[0]}")
            return mass_spring_model(**desc)
        if kind == "scalar":
            allowed = {"a", "h", "q", "r", "p0", "m0"}
            bad = sorted(set(desc) - allowed)
            if bad:
                raise ConfigError("unknown field", path=f"model.{bad[0]}")
            if "a" not in desc:
                raise ConfigError("is required", path="model.a")
            return SystemModel.scalar(**desc)
        try:
            return SystemModel.from_dict(desc)
        except DualKFError as exc:
            raise ConfigError(str(exc), path="model") from exc

    def step_policy(self):
        base = dict(_STEP_DEFAULTS.get(self.mode, {}))
        base.update(self.step)
        return StepPolicy(**base)


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_real(v):
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) and math.isfinite(v)
