"""Experiment configuration: a flat YAML file of dotted keys.

Keys and their defaults::

    task.kind: throw            # throw | hammer | tip_speed
    task.<field>: ...           # any TaskSpec field (H, duration, dt, step_limit, ...)
    model.<field>: ...          # any ArmModel field; joint fields take a scalar or 3-list
    run.methods: [bo-lei, bo-ucb, cem, random]
    run.P_values: [2, 5]
    run.budgets: [100, 500]
    run.seeds: [0, 1, 2, 3, 4]
    run.output: runs/default
    run.noise_sigma: 0.0        # Gaussian observation noise added to J
    method.<id>.<setting>: ...  # e.g. method.bo-ucb.kappa: 0.9, method.cem.pop: 50

Nested mappings are flattened to dotted keys, so ``task: {kind: hammer}`` and
``task.kind: hammer`` are equivalent.  Precedence, lowest first: built-in
defaults, the config file, then ``--override key=value`` flags in order.
Override values are parsed as YAML scalars or lists.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .arm.model import ArmModel, ContinuumJoint, RigidLink
from .arm.tasks import TaskSpec
from .optimizers import METHODS

DEFAULTS = {
    "task.kind": "throw",
    "run.methods": list(METHODS),
    "run.P_values": [2, 5],
    "run.budgets": [100, 500],
    "run.seeds": [0, 1, 2, 3, 4],
    "run.output": "runs/default",
    "run.noise_sigma": 0.0,
}

METHOD_SETTINGS = {
    "bo-lei": {"restarts", "refit_every", "n_init", "candidate_count", "refine_count",
               "refine_steps"},
    "bo-ucb": {"kappa", "restarts", "refit_every", "n_init", "candidate_count", "refine_count",
               "refine_steps"},
    "cem": {"pop", "elite_frac"},
    "random": {"pop"},
}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every offending key."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


@dataclass(frozen=True)
class MethodSpec:
    id: str
    settings: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSpec
    methods: tuple[MethodSpec, ...]
    P_values: tuple[int, ...]
    budgets: tuple[int, ...]
    seeds: tuple[int, ...]
    model_overrides: dict
    output: str
    noise_sigma: float = 0.0
    flat: dict = field(default_factory=dict, compare=False)

    @property
    def max_budget(self) -> int:
        return max(self.budgets)

    def model(self) -> ArmModel:
        return ArmModel().with_overrides(**self.model_overrides)

    def task_for(self, P: int) -> TaskSpec:
        return dataclasses.replace(self.task, P=int(P))

    def cell_ids(self) -> list[str]:
        return [cell_id(m.id, P, s) for m in self.methods for P in self.P_values
                for s in self.seeds]

    def method(self, method_id: str) -> MethodSpec:
        for m in self.methods:
            if m.id == method_id:
                return m
        raise KeyError(method_id)


def cell_id(method: str, P: int, seed: int) -> str:
    return f"{method}_P{P}_s{seed}"


def parse_cell_id(cid: str) -> tuple[str, int, int]:
    method, p, s = cid.rsplit("_", 2)
    if not (p.startswith("P") and s.startswith("s")):
        raise ValueError(f"malformed cell id {cid!r}")
    return method, int(p[1:]), int(s[1:])


def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError([f"override {text!r} is not key=value"])
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw) if raw.strip() else None


def load_flat(path=None, overrides=()) -> dict:
    flat = dict(DEFAULTS)
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError([f"cannot read {path}: {exc}"]) from exc
        if not isinstance(data, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
        flat.update(flatten(data))
    for item in overrides:
        k, v = parse_override(item)
        flat[k] = v
    return flat


def _int_list(flat, key, problems, minimum):
    v = flat[key]
    v = v if isinstance(v, list) else [v]
    if not v or not all(isinstance(x, int) and not isinstance(x, bool) and x >= minimum
                        for x in v):
        problems.append(f"{key}: need a non-empty list of integers >= {minimum}")
        return ()
    return tuple(v)


def build_config(flat: dict) -> ExperimentConfig:
    """Validate a flat dict; every problem is collected before raising."""
    problems = []
    task_fields = {f.name for f in dataclasses.fields(TaskSpec)}
    model_fields = ({f.name for f in dataclasses.fields(ArmModel)} - {"joints", "links"}
                    | {f.name for f in dataclasses.fields(ContinuumJoint)}
                    | {f"link_{f.name}" for f in dataclasses.fields(RigidLink)})
    task_kw, model_kw, method_kw = {}, {}, {}
    for key, val in flat.items():
        section, _, name = key.partition(".")
        if section == "task" and name in task_fields:
            task_kw[name] = tuple(val) if isinstance(val, list) else val
        elif section == "model" and name in model_fields:
            model_kw[name] = val
        elif section == "method" and name.count(".") == 1:
            mid, setting = name.split(".")
            if mid not in METHOD_SETTINGS or setting not in METHOD_SETTINGS[mid]:
                problems.append(f"{key}: unknown method setting")
            else:
                method_kw.setdefault(mid, {})[setting] = val
        elif key not in DEFAULTS:
            problems.append(f"{key}: unknown key")

    methods = flat["run.methods"]
    methods = methods if isinstance(methods, list) else [methods]
    if not methods:
        problems.append("run.methods: must be non-empty")
    for m in methods:
        if m not in METHODS:
            problems.append(f"run.methods: unknown method {m!r}")
    if len(set(methods)) != len(methods):
        problems.append("run.methods: duplicate entries")
    P_values = _int_list(flat, "run.P_values", problems, 2)
    budgets = _int_list(flat, "run.budgets", problems, 1)
    seeds = _int_list(flat, "run.seeds", problems, 0)
    if not isinstance(flat["run.output"], str) or not flat["run.output"]:
        problems.append("run.output: need a directory path")
    sigma = flat["run.noise_sigma"]
    if not isinstance(sigma, (int, float)) or isinstance(sigma, bool) or sigma < 0:
        problems.append("run.noise_sigma: need a non-negative number")

    task = None
    try:
        kind = task_kw.pop("kind", "throw")
        task = TaskSpec.for_kind(kind, **task_kw)
    except (TypeError, ValueError) as exc:
        problems.append(f"task: {exc}")
    try:
        ArmModel().with_overrides(**model_kw)
    except (TypeError, ValueError) as exc:
        problems.append(f"model: {exc}")
    if task is not None and budgets:
        for m in methods:
            if m in ("bo-lei", "bo-ucb"):
                n_init = method_kw.get(m, {}).get("n_init") or task.dims + 1
                if max(budgets) <= n_init:
                    problems.append(f"run.budgets: {m} needs a budget above {n_init}")
            if m == "cem" and max(budgets) < method_kw.get(m, {}).get("pop", 50):
                problems.append("run.budgets: cem needs a budget >= its population")
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        task=task,
        methods=tuple(MethodSpec(m, dict(method_kw.get(m, {}))) for m in methods),
        P_values=P_values, budgets=tuple(sorted(set(budgets))), seeds=seeds,
        model_overrides=model_kw, output=flat["run.output"], noise_sigma=float(sigma),
        flat=dict(sorted(flat.items())),
    )


def load_config(path=None, overrides=()) -> ExperimentConfig:
    return build_config(load_flat(path, overrides))
