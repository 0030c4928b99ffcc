"""Experiment configuration: strict nested dataclasses loaded from YAML.

Unknown keys are rejected, the seed is mandatory, and :meth:`ExperimentConfig.to_dict`
materialises every default so the echoed config fully determines a run.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .dynamics import MAX_RETURN, MapParams
from .groups import CocycleSpec, axis_generator, fix_space, golden_angle, project_dichotomy
from .observables import ObservableSpec

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "config_from_dict",
           "apply_overrides", "canonical_json"]


class ConfigError(ValueError):
    pass


# fields that affect where and how fast a run happens but not its results
EXECUTION_KEYS = (("output", "out_dir"), ("simulation", "threads"))


def _default_grid():
    return [1000, 3162, 10000, 31623, 100000, 316228, 1000000]


@dataclass
class GroupConfig:
    kind: str = "SO2"          # trivial | SO2 | SO3 | SOd | torus
    dim: int = 2


@dataclass
class CocycleConfig:
    omega0: Optional[float] = None     # base angle(s); None means the golden angle
    omega1: float = 0.5                # modulation angle
    eta: float = 1.0
    axis: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    modulation_axis: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    generator_seed: int = 0            # SOd random generators
    scale0: float = 1.0
    scale1: float = 0.3
    s0: Optional[list] = None          # explicit generators override the above
    s1: Optional[list] = None


@dataclass
class ObservableConfig:
    kind: str = "constant"
    v0: list = field(default_factory=lambda: [1.0, 0.0])
    direction: Optional[list] = None
    eta: float = 1.0
    mode: str = "raw"                  # perp | fix | raw
    table_x: Optional[list] = None
    table_v: Optional[list] = None
    centering: str = "auto"            # auto | none | orbit | operator
    centering_length: int = 100_000_000
    centering_tol: float = 1e-2


@dataclass
class SimulationConfig:
    seed: Optional[int] = None
    samples: int = 1000
    grid: list = field(default_factory=_default_grid)
    max_return: int = MAX_RETURN
    start: str = "lebesgue"            # lebesgue | Y-uniform
    g0: str = "identity"               # identity | haar
    path_n: int = 0
    path_stride: int = 1
    threads: int = 1


@dataclass
class AnalysisConfig:
    ks: bool = True
    exponent: bool = True
    stable_index: bool = False
    equivariance: bool = True
    ks_n: Optional[int] = None         # grid point for KS/covariance; default: last
    ks_threshold: float = 0.03
    hill_fractions: list = field(default_factory=lambda: [0.01, 0.05])
    equivariance_samples: int = 64


@dataclass
class InducingConfig:
    nmax: int = 1000
    orbit_length: int = 10_000_000
    burn_in: int = 100_000
    short_orbits: int = 1000
    short_returns: int = 2000
    tail_window: list = field(default_factory=lambda: [10, 1000])
    p: float = 2.0
    epsilon: float = 0.15


@dataclass
class TransferConfig:
    enabled: bool = False
    m: int = 512
    nmax: int = 2000
    k: int = 6


@dataclass
class VerifyConfig:
    level: str = "quick"               # quick | full (acceptance scale)
    samples: int = 10000
    n: int = 2000
    tower_trajectories: int = 10
    tower_steps: int = 20000
    m: int = 128
    checks: Optional[list] = None      # criterion numbers; None runs all


@dataclass
class OutputConfig:
    out_dir: str = "runs"
    binary: bool = False


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    gamma: float = 0.3
    group: GroupConfig = field(default_factory=GroupConfig)
    cocycle: CocycleConfig = field(default_factory=CocycleConfig)
    observable: ObservableConfig = field(default_factory=ObservableConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    inducing: InducingConfig = field(default_factory=InducingConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # -- validation and echo ------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        if self.simulation.seed is None:
            raise ConfigError("simulation.seed is mandatory")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("gamma must lie in [0, 1)")
        if self.group.kind not in ("trivial", "SO2", "SO3", "SOd", "torus"):
            raise ConfigError(f"unknown group kind {self.group.kind!r}")
        if self.observable.mode not in ("perp", "fix", "raw"):
            raise ConfigError("observable.mode must be perp, fix or raw")
        if self.observable.centering not in ("auto", "none", "orbit", "operator"):
            raise ConfigError("observable.centering must be auto, none, orbit or operator")
        if self.verify.level not in ("quick", "full"):
            raise ConfigError("verify.level must be quick or full")
        if self.simulation.start not in ("lebesgue", "Y-uniform"):
            raise ConfigError("simulation.start must be lebesgue or Y-uniform")
        if self.simulation.g0 not in ("identity", "haar"):
            raise ConfigError("simulation.g0 must be identity or haar")
        g = self.simulation.grid
        if not g or any(int(a) < 1 for a in g) or any(int(b) <= int(a) for a, b in zip(g, g[1:])):
            raise ConfigError("simulation.grid must be increasing positive integers")
        if self.simulation.samples < 1 or self.simulation.threads < 1:
            raise ConfigError("samples and threads must be positive")
        if len(self.observable.v0) != self.group.dim:
            raise ConfigError("observable.v0 must have length group.dim")
        return self

    def to_dict(self, execution: bool = True) -> dict:
        """All fields with defaults materialised.

        ``execution=False`` drops the settings that cannot change results
        (output directory, thread count); that form is hashed and echoed.
        """
        out = dataclasses.asdict(self)
        if not execution:
            for section, key in EXECUTION_KEYS:
                out[section].pop(key, None)
        return out

    def execution_dict(self) -> dict:
        full = dataclasses.asdict(self)
        return {f"{s}.{k}": full[s][k] for s, k in EXECUTION_KEYS}

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict(execution=False)).encode()).hexdigest()

    # -- builders -------------------------------------------------------------------

    def map_params(self) -> MapParams:
        return MapParams(gamma=float(self.gamma), max_return=int(self.simulation.max_return))

    def cocycle_spec(self) -> CocycleSpec:
        c, kind, d = self.cocycle, self.group.kind, self.group.dim
        if c.s0 is not None or c.s1 is not None:
            s0 = np.asarray(c.s0 if c.s0 is not None else np.zeros((d, d)), dtype=float)
            s1 = np.asarray(c.s1 if c.s1 is not None else np.zeros((d, d)), dtype=float)
            return CocycleSpec(kind, s0, s1, c.eta)
        w0 = golden_angle() if c.omega0 is None else c.omega0
        if kind == "trivial":
            return CocycleSpec.trivial(d)
        if kind == "SO2":
            return CocycleSpec.so2(float(w0), float(c.omega1), c.eta)
        if kind == "SO3":
            return CocycleSpec.so3_axis(float(w0), float(c.omega1), c.eta, axis=c.axis,
                                        modulation_axis=c.modulation_axis)
        if kind == "torus":
            k = d // 2
            w0s = np.atleast_1d(w0).astype(float)
            if w0s.size == 1:
                w0s = w0s[0] * np.sqrt(np.arange(2, 2 + k))
            return CocycleSpec.torus(w0s, np.full(k, float(c.omega1)), c.eta)
        rng = np.random.default_rng(c.generator_seed)
        return CocycleSpec.random_sod(d, rng, c.scale0, c.scale1, c.eta)

    def observable_spec(self, with_info: bool = False):
        """Observable with the dichotomy projection and centering applied."""
        o = self.observable
        cocycle = self.cocycle_spec()
        info = {"mode": o.mode}
        v0 = np.asarray(o.v0, dtype=float)
        if o.mode != "raw":
            fs = fix_space(cocycle.h0())
            v0 = project_dichotomy(v0, fs, o.mode)
            info["fix_rank"] = fs.rank
            if fs.rank == 0:
                info["note"] = "Fix h(0) = {0}: both modes project to the complement"
        spec = ObservableSpec(o.kind, v0, None if o.direction is None else o.direction, o.eta,
                              o.table_x, o.table_v)
        if o.centering != "none":
            from .ensemble import estimate_centering, trivial_projector
            force = o.centering == "orbit"
            proj = trivial_projector(cocycle)
            if o.centering in ("auto", "operator") and np.any(proj):
                # invariant mean from the untwisted operator on the structural partition
                from .inducing import build_return_partition
                from .transfer import induced_mean
                t = self.transfer
                part = build_return_partition(self.map_params(), t.nmax, estimate=False)
                im = induced_mean(self.map_params(), part, spec, m=t.m, N_max=t.nmax)
                spec = spec.centered(proj @ im["mean"])
                info["centering"] = {"method": "operator", "mean": im["mean"].tolist(),
                                     "m": t.m, "N_max": t.nmax,
                                     "truncated_mass": im["truncated_mass"]}
            elif force:
                off, cinfo = estimate_centering(self.map_params(), cocycle, spec,
                                                int(o.centering_length), self.simulation.seed,
                                                tol=o.centering_tol, force=force)
                spec = spec.centered(off)
                info["centering"] = cinfo
            else:
                info["centering"] = {"skipped": True, "reason": "fixed-point free action"}
        info["v0"] = spec.v0.tolist()
        info["centering_offset"] = spec.centering_offset.tolist()
        return (spec, info) if with_info else spec


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {path or 'config'}")
    kwargs = {}
    for k, v in data.items():
        f = names[k]
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[k] = _build(sub, v, f"{path}.{k}" if path else k)
        else:
            kwargs[k] = v
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data or {}, "")
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


def apply_overrides(data: dict, overrides: dict) -> dict:
    """Dotted-key overrides (``{'simulation.seed': 3}``) applied to a raw mapping."""
    out = copy.deepcopy(data or {})
    for key, val in overrides.items():
        if val is None:
            continue
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return out
