"""Experiment configuration: YAML documents parsed into strict dataclasses.

Unknown keys are rejected with their full key path. A config name without a
path separator or suffix is looked up among the bundled presets first.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .algorithms import METHODS
from .inner import SOLVERS
from .problems import resolve_dataset_path

PRESET_DIR = Path(__file__).parent / "presets"


class ConfigError(ValueError):
    pass


@dataclass
class TopologyConfig:
    kind: str = "grid2d"
    rows: int | None = None
    cols: int | None = None
    n: int | None = None
    p: float | None = None
    seed: int = 0
    path: str | None = None
    weights: str = "metropolis"

    def graph_kwargs(self) -> dict:
        keys = {"grid2d": ("rows", "cols"), "path": ("n",), "complete": ("n",),
                "erdos_renyi": ("n", "p", "seed"), "edge_list": ("path", "n")}.get(self.kind, ())
        return {k: getattr(self, k) for k in keys if getattr(self, k) is not None}


@dataclass
class PartitionConfig:
    a: float = 1.0
    b: float = 10.0
    seed: int = 0


@dataclass
class ProblemConfig:
    """``seed`` and ``partition.seed`` are offsets; the run seed is added to both."""

    kind: str = "quadratic"
    # logistic
    dataset: str | None = None
    normalize: bool = False
    lam: float = 0.01
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    # quadratic
    m: int = 5
    d: int = 5
    mu: float = 0.1
    L: float = 1.0
    mu_overrides: dict[int, float] = field(default_factory=dict)
    L_overrides: dict[int, float] = field(default_factory=dict)
    b_scale: float = 1.0
    seed: int = 0


@dataclass
class ParamsConfig:
    """Outer-method knobs shared by all methods of an experiment.

    ``eta: auto`` means 1/beta, with beta taken on the gossip operator each
    method actually applies. ``mode: theory`` replaces (eta, s, gamma, c) of the
    lazy methods by their theoretical schedules; the exact methods then use
    eta = 1/beta and s = 1.
    """

    mode: str = "manual"
    eta: float | str = "auto"
    s: float = 1.0
    gamma: float = 0.0
    c: float = 0.0
    D: int = 1
    K: int | None = None


@dataclass
class InnerConfig:
    solver: str = "katyusha"
    steps: int | None = None
    epochs: float | None = None
    c: float = 0.5
    C_kat: float = 1.0


@dataclass
class StopConfig:
    max_iters: int = 1000
    target_subopt: float = float("inf")


@dataclass
class OutputConfig:
    dir: str = "runs"
    format: str = "csv"


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    params: ParamsConfig = field(default_factory=ParamsConfig)
    inner: InnerConfig = field(default_factory=InnerConfig)
    stop: StopConfig = field(default_factory=StopConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentConfig":
        if not self.methods:
            raise ConfigError("methods: at least one method is required")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"methods: unknown method {m!r}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods: duplicate entries")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        if self.problem.kind not in ("quadratic", "logistic"):
            raise ConfigError(f"problem.kind: expected quadratic or logistic, got {self.problem.kind!r}")
        if self.problem.kind == "logistic":
            if not self.problem.dataset:
                raise ConfigError("problem.dataset: required for logistic problems")
            try:
                resolve_dataset_path(self.problem.dataset)
            except ValueError as exc:
                raise ConfigError(f"problem.dataset: {exc}") from None
        if self.topology.kind == "edge_list" and not (self.topology.path and Path(self.topology.path).is_file()):
            raise ConfigError(f"topology.path: edge-list file not found: {self.topology.path}")
        if self.topology.weights not in ("metropolis", "max_degree"):
            raise ConfigError(f"topology.weights: expected metropolis or max_degree, got {self.topology.weights!r}")
        if self.params.mode not in ("manual", "theory"):
            raise ConfigError(f"params.mode: expected manual or theory, got {self.params.mode!r}")
        if isinstance(self.params.eta, str) and self.params.eta != "auto":
            raise ConfigError(f"params.eta: expected a number or 'auto', got {self.params.eta!r}")
        if self.inner.solver not in SOLVERS:
            raise ConfigError(f"inner.solver: expected one of {SOLVERS}")
        if self.output.format not in ("csv", "json"):
            raise ConfigError(f"output.format: expected csv or json, got {self.output.format!r}")
        if self.stop.max_iters < 0:
            raise ConfigError("stop.max_iters: must be >= 0")
        return self


# ---------------------------------------------------------------------------
# strict dict -> dataclass conversion


def _coerce(value: Any, tp: Any, keypath: str) -> Any:
    if dataclasses.is_dataclass(tp):
        if value is None:
            return tp()
        if not isinstance(value, dict):
            raise ConfigError(f"{keypath}: expected a mapping")
        return _build(tp, value, keypath)
    if tp == "float" or tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{keypath}: expected a number, got {value!r}")
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{keypath}: expected a number, got {value!r}") from None
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{keypath}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{keypath}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{keypath}: expected a string, got {value!r}")
        return value
    return value


# field annotations are strings under postponed evaluation; map them by hand
_TYPES = {
    "int": int, "float": float, "str": str, "bool": bool,
    "int | None": (int, None), "float | None": (float, None), "str | None": (str, None),
    "float | str": "float|str",
    "list[str]": (list, str), "list[int]": (list, int),
    "dict[int, float]": (dict, float),
}


def _build(cls, data: dict, prefix: str = ""):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        keypath = f"{prefix}.{key}" if prefix else str(key)
        if key not in fields:
            raise ConfigError(f"{keypath}: unknown key")
        ann = fields[key].type
        nested = {"TopologyConfig": TopologyConfig, "ProblemConfig": ProblemConfig,
                  "PartitionConfig": PartitionConfig, "ParamsConfig": ParamsConfig,
                  "InnerConfig": InnerConfig, "StopConfig": StopConfig, "OutputConfig": OutputConfig}
        if ann in nested:
            kwargs[key] = _coerce(value, nested[ann], keypath)
            continue
        spec = _TYPES.get(ann)
        if spec is None:
            raise ConfigError(f"{keypath}: unsupported field type {ann}")
        if isinstance(spec, tuple) and spec[1] is None:
            kwargs[key] = None if value is None else _coerce(value, spec[0], keypath)
        elif spec == "float|str":
            kwargs[key] = value if isinstance(value, str) and value == "auto" else _coerce(value, float, keypath)
        elif isinstance(spec, tuple) and spec[0] is list:
            if not isinstance(value, list):
                raise ConfigError(f"{keypath}: expected a list")
            kwargs[key] = [_coerce(v, spec[1], f"{keypath}[{i}]") for i, v in enumerate(value)]
        elif isinstance(spec, tuple) and spec[0] is dict:
            if not isinstance(value, dict):
                raise ConfigError(f"{keypath}: expected a mapping")
            kwargs[key] = {_coerce(k, int, f"{keypath}.{k}"): _coerce(v, float, f"{keypath}.{k}")
                           for k, v in value.items()}
        else:
            if value is None:
                raise ConfigError(f"{keypath}: value required")
            kwargs[key] = _coerce(value, spec, keypath)
    return cls(**kwargs)


def resolve_config_path(name: str | Path) -> Path:
    path = Path(name)
    if path.is_file():
        return path
    preset = PRESET_DIR / f"{name}.yaml"
    if preset.is_file():
        return preset
    raise ConfigError(f"config not found: {name} (neither a file nor a bundled preset)")


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def parse_config(source: str | Path | dict, overrides: dict | None = None) -> ExperimentConfig:
    """Load a config from a path, preset name or mapping and apply overrides.

    ``overrides`` maps dotted key paths (e.g. ``params.eta``) to values and
    wins over the document.
    """
    if isinstance(source, dict):
        doc = source
    else:
        path = resolve_config_path(source)
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: malformed YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected a mapping")
    doc = _deep_copy(doc)
    for dotted, value in (overrides or {}).items():
        node = doc
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{dotted}: cannot override inside a non-mapping")
        node[leaf] = value
    return _build(ExperimentConfig, doc).validate()


def _deep_copy(doc):
    if isinstance(doc, dict):
        return {k: _deep_copy(v) for k, v in doc.items()}
    if isinstance(doc, list):
        return [_deep_copy(v) for v in doc]
    return doc
