"""Run configuration: JSON document with keys seed, schedule, model, strategy, execution."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .model import Arch
from .stream import DEFAULT_HORIZON, ReleaseSchedule, build_registry, default_eval_events
from .strategies import KINDS, PUBLISHED_DECAYS, PUBLISHED_HPARAMS, StrategyConfig

MONTHLY_BATCH_SETTINGS = (10, 20, 50)


class ConfigError(ValueError):
    pass


def _from_dict(cls, d: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class ScheduleSpec:
    n_generators: int = 6
    dim: int = 32
    strength: float = 2.5
    noise_scale: float = 0.5
    release_months: tuple[int, ...] | None = None
    horizon_months: int = DEFAULT_HORIZON
    eval_cadence: str = "release"  # or "monthly"
    registry_seed: int | None = None

    def __post_init__(self):
        if self.eval_cadence not in ("release", "monthly"):
            raise ConfigError(f"eval_cadence must be 'release' or 'monthly', got {self.eval_cadence!r}")
        if self.release_months is not None:
            object.__setattr__(self, "release_months", tuple(int(m) for m in self.release_months))

    def build(self, seed: int) -> ReleaseSchedule:
        gens = build_registry(
            self.n_generators, self.dim, self.strength,
            seed if self.registry_seed is None else self.registry_seed,
            noise_scale=self.noise_scale, release_months=self.release_months,
            horizon_months=self.horizon_months,
        )
        if self.eval_cadence == "monthly":
            events = tuple(range(gens[0].release_month, self.horizon_months))
        else:
            events = default_eval_events([g.release_month for g in gens], self.horizon_months)
        return ReleaseSchedule(tuple(gens), self.horizon_months, events)


@dataclass(frozen=True)
class ModelSpec:
    hidden_dim: int = 32
    activation: str = "tanh"
    init_scale: float = 1.0

    def arch(self, input_dim: int) -> Arch:
        return Arch(input_dim, self.hidden_dim, self.activation)


@dataclass(frozen=True)
class ExecutionSpec:
    monthly_batches: int = 10
    batch_size: int = 16
    eval_per_class: int = 500
    retrain_iterations: int = 4000
    retrain_lr: float = 1e-2
    retrain_per_dataset: int = 16

    def __post_init__(self):
        if self.monthly_batches < 1:
            raise ConfigError("monthly_batches must be >= 1")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch_size must be even and >= 2")
        if self.retrain_per_dataset < 2 or self.retrain_per_dataset % 2:
            raise ConfigError("retrain_per_dataset must be even and >= 2")
        if self.eval_per_class < 1 or self.retrain_iterations < 1:
            raise ConfigError("eval_per_class and retrain_iterations must be positive")


@dataclass(frozen=True)
class SimulationConfig:
    seed: int = 0
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    execution: ExecutionSpec = field(default_factory=ExecutionSpec)

    def to_dict(self) -> dict:
        sched = asdict(self.schedule)
        if sched["release_months"] is not None:
            sched["release_months"] = list(sched["release_months"])
        return {
            "seed": self.seed,
            "schedule": sched,
            "model": asdict(self.model),
            "strategy": self.strategy.to_dict(),
            "execution": asdict(self.execution),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        unknown = set(d) - {"seed", "schedule", "model", "strategy", "execution"}
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        try:
            return cls(
                seed=int(d.get("seed", 0)),
                schedule=_from_dict(ScheduleSpec, d.get("schedule", {}), "schedule"),
                model=_from_dict(ModelSpec, d.get("model", {}), "model"),
                strategy=StrategyConfig.from_dict(d.get("strategy", {})),
                execution=_from_dict(ExecutionSpec, d.get("execution", {}), "execution"),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def with_seed(self, seed: int) -> "SimulationConfig":
        return replace(self, seed=seed)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.blake2b(self.canonical_json().encode(), digest_size=8).hexdigest()

    @property
    def run_id(self) -> str:
        s = self.strategy
        return f"{s.kind}-mb{self.execution.monthly_batches}-s{self.seed}-{self.config_hash()}"


def load_config(path: str | Path) -> SimulationConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return SimulationConfig.from_dict(doc)


def save_config(cfg: SimulationConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def published_strategy(kind: str, monthly_batches: int) -> StrategyConfig:
    """Hyperparameters exactly as published, unstated ones left at class defaults."""
    lr, buf, lam = PUBLISHED_HPARAMS[monthly_batches][kind]
    plastic, stable = PUBLISHED_DECAYS.get(kind, (0.99, 0.999))
    return StrategyConfig(
        kind=kind, lr=lr, buffer_capacity=buf or 0, lambda_reg=lam or 0.0,
        plastic_decay=plastic, stable_decay=stable,
        esmer_beta=1.0, esmer_alpha=0.9,
    )


# Desk-scale defaults for the tanh MLP on synthetic streams.
DESK_LR = 1e-3
DESK = {
    "Naive": {},
    "Replay": {"buffer_capacity": 50},
    "EWC": {"lambda_reg": 100.0},
    "ReplayEWC": {"buffer_capacity": 50, "lambda_reg": 1.0},
    "CLSER": {"buffer_capacity": 50, "lambda_reg": 1.0, "plastic_decay": 0.9, "stable_decay": 0.99},
    "CLSEREWC": {"buffer_capacity": 50, "lambda_reg": 1.0, "plastic_decay": 0.9, "stable_decay": 0.99},
    "ESMER": {"buffer_capacity": 50, "lambda_reg": 0.5, "plastic_decay": 1.0, "stable_decay": 0.99,
              "esmer_beta": 3.0},
    "DERPP": {"buffer_capacity": 50, "lambda_reg": 0.5, "derpp_alpha": 0.5},
}


def default_strategy(kind: str, monthly_batches: int = 10) -> StrategyConfig:
    if kind not in KINDS:
        raise ConfigError(f"unknown strategy kind {kind!r}")
    return StrategyConfig(kind=kind, lr=DESK_LR, **DESK[kind])


def default_config(kind: str = "Naive", monthly_batches: int = 10, seed: int = 0) -> SimulationConfig:
    return SimulationConfig(
        seed=seed,
        strategy=default_strategy(kind, monthly_batches),
        execution=ExecutionSpec(monthly_batches=monthly_batches),
    )


def derive_seed(master_seed: int, replicate: int) -> int:
    """63-bit per-replicate seed; shared by every strategy so runs stay paired."""
    import numpy as np

    words = np.random.SeedSequence([master_seed & (2**64 - 1), replicate]).generate_state(2, np.uint32)
    return int((int(words[0]) << 31) ^ int(words[1]))


def expand_grid(doc: dict) -> list[SimulationConfig]:
    """Grid file -> configs.

    Either ``{"runs": [config, ...]}`` (configs without a seed get
    ``master_seed`` XOR their config hash) or the compact form
    ``{"master_seed", "base", "strategies", "monthly_batches", "n_seeds"}``.
    """
    master = int(doc.get("master_seed", 0))
    if "runs" in doc:
        out = []
        for d in doc["runs"]:
            cfg = SimulationConfig.from_dict(d)
            if "seed" not in d:
                cfg = cfg.with_seed(master ^ int(cfg.config_hash(), 16) & (2**63 - 1))
            out.append(cfg)
        return out
    unknown = set(doc) - {"master_seed", "base", "strategies", "monthly_batches", "n_seeds", "seeds", "strategy_overrides"}
    if unknown:
        raise ConfigError(f"unknown grid keys {sorted(unknown)}")
    base = SimulationConfig.from_dict(doc.get("base", {}))
    kinds = doc.get("strategies", list(KINDS))
    mbs = doc.get("monthly_batches", [base.execution.monthly_batches])
    seeds = doc.get("seeds")
    if seeds is None:
        seeds = [derive_seed(master, i) for i in range(int(doc.get("n_seeds", 1)))]
    overrides = doc.get("strategy_overrides", {})
    out = []
    for kind in kinds:
        for mb in mbs:
            strat = replace(default_strategy(kind, mb), **overrides.get(kind, {}))
            for s in seeds:
                out.append(replace(base, seed=int(s), strategy=strat,
                                   execution=replace(base.execution, monthly_batches=int(mb))))
    if not out:
        raise ConfigError("grid expands to zero runs")
    return out
