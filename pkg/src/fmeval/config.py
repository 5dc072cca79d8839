"""Run configuration: one YAML document, with ${VAR} interpolation for secrets only."""

from __future__ import annotations

import os
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import yaml

from fmeval.errors import InvalidInput
from fmeval.evaluation import LLM_WITH_DOMAIN, LLM_WITHOUT_DOMAIN, EvalConfig
from fmeval.llm import ClientConfig

MODES = {"raw": (LLM_WITHOUT_DOMAIN,), "domain": (LLM_WITH_DOMAIN,), "both": (LLM_WITHOUT_DOMAIN, LLM_WITH_DOMAIN)}
DATASET_KINDS = ("adult", "co2", "synthetic", "csv")
SECRET_KEYS = ("api_key",)
_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "adult"
    csv: str | None = None
    schema: str | None = None
    # a recipe file, "builtin" for the dataset's own rewrite, or "none"
    recipe: str = "builtin"
    family: str = "linear"
    params: dict = field(default_factory=dict)
    n: int = 100
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise InvalidInput(f"dataset kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "csv" and not (self.csv and self.schema):
            raise InvalidInput("csv datasets need both 'csv' and 'schema' paths")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train_n: int = 100
    test_n: int | None = 500
    mode: str = "both"
    backend: str = "mock"
    client: ClientConfig = field(default_factory=ClientConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    mlp_train_sizes: tuple[int, ...] = (100, 10000)
    # epochs per MLP train size; sizes not listed use eval.mlp_epochs
    mlp_epochs_by_size: dict = field(default_factory=lambda: {10000: 10})
    gp_kernels: tuple[str, ...] = ("rbf", "llm", "expert")
    select_k: int = 5
    select_examples: int = 50
    select_train_n: int = 10000
    out: str = "runs/default"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInput(f"mode must be one of {sorted(MODES)}, got {self.mode!r}")
        if self.backend not in ("live", "mock"):
            raise InvalidInput(f"backend must be live or mock, got {self.backend!r}")
        object.__setattr__(self, "mlp_train_sizes", tuple(int(n) for n in self.mlp_train_sizes))
        object.__setattr__(self, "gp_kernels", tuple(self.gp_kernels))
        object.__setattr__(self, "mlp_epochs_by_size", {int(k): int(v) for k, v in self.mlp_epochs_by_size.items()})

    @property
    def conditions(self) -> tuple[str, ...]:
        return MODES[self.mode]

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def snapshot(self) -> dict:
        """Plain dict of the config with secrets removed."""
        d = asdict(self)
        for key in SECRET_KEYS:
            if d["client"].get(key) is not None:
                d["client"][key] = "<redacted>"
        d["mlp_train_sizes"] = list(self.mlp_train_sizes)
        d["gp_kernels"] = list(self.gp_kernels)
        return d


def _interpolate_secrets(node, path=()):
    if isinstance(node, Mapping):
        return {k: _interpolate_secrets(v, path + (k,)) for k, v in node.items()}
    if isinstance(node, list):
        return [_interpolate_secrets(v, path) for v in node]
    if isinstance(node, str) and _VAR.search(node):
        if not path or path[-1] not in SECRET_KEYS:
            raise InvalidInput(f"environment interpolation is only allowed for secrets, found in {'.'.join(path)}")

        def sub(m):
            value = os.environ.get(m.group(1))
            if value is None:
                raise InvalidInput(f"environment variable {m.group(1)} is not set")
            return value

        return _VAR.sub(sub, node)
    return node


def _build(cls, d: Mapping | None, where: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise InvalidInput(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**d)


def config_from_dict(raw: Mapping, base_dir: str | Path = ".") -> RunConfig:
    raw = _interpolate_secrets(dict(raw))
    if raw.get("seed") is None:
        raise InvalidInput("the run config must set 'seed'")
    base = Path(base_dir)
    ds = dict(raw.pop("dataset", None) or {})
    for key in ("csv", "schema"):
        if ds.get(key):
            ds[key] = str((base / ds[key]).resolve()) if not Path(ds[key]).is_absolute() else ds[key]
    recipe = ds.get("recipe")
    if recipe not in (None, "builtin", "none"):
        ds["recipe"] = str((base / recipe).resolve()) if not Path(recipe).is_absolute() else recipe
    dataset = _build(DatasetSpec, ds, "dataset")
    for key in ("csv", "schema", "recipe"):
        value = getattr(dataset, key)
        if value and value not in ("builtin", "none") and not Path(value).exists():
            raise InvalidInput(f"dataset.{key} path does not exist: {value}")
    client = _build(ClientConfig, raw.pop("client", None), "client")
    ev = _build(EvalConfig, raw.pop("eval", None), "eval")
    return _build(RunConfig, {**raw, "dataset": dataset, "client": client, "eval": ev}, "run config")


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise InvalidInput(f"config file not found: {p}")
    raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    if not isinstance(raw, Mapping):
        raise InvalidInput("the run config must be a mapping")
    return config_from_dict(raw, p.parent)
