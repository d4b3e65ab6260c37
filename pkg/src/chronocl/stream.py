"""Synthetic chronological deepfake stream.

Real samples are i.i.d. standard normal vectors. A generator adds its own
unit-norm signature (scaled by ``strength``) plus isotropic noise, so every
generator is detectable only along its own direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

DEFAULT_RELEASE_MONTHS = (0, 27, 29, 36, 60, 67)
DEFAULT_HORIZON = 80
REAL = "real"

# SeedSequence spawn keys; one independent stream per role.
STREAM_SELECT = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_INIT = 3
STREAM_STRATEGY = 4
STREAM_REGISTRY = 5


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for one role of a simulation seeded by ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class GeneratorSpec:
    id: int
    release_month: int
    signature: np.ndarray
    strength: float = 1.0
    noise_scale: float = 0.5

    @property
    def dim(self) -> int:
        return self.signature.shape[0]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "release_month": self.release_month,
            "signature": [float(v) for v in self.signature],
            "strength": self.strength,
            "noise_scale": self.noise_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(
            id=int(d["id"]),
            release_month=int(d["release_month"]),
            signature=np.asarray(d["signature"], dtype=np.float64),
            strength=float(d["strength"]),
            noise_scale=float(d["noise_scale"]),
        )


@dataclass(frozen=True)
class ReleaseSchedule:
    generators: tuple[GeneratorSpec, ...]
    horizon_months: int = DEFAULT_HORIZON
    eval_events: tuple[int, ...] = field(default=())

    def __post_init__(self):
        gens = tuple(self.generators)
        object.__setattr__(self, "generators", gens)
        if not gens:
            raise ValueError("schedule needs at least one generator")
        months = [g.release_month for g in gens]
        if any(b <= a for a, b in zip(months, months[1:])):
            raise ValueError(f"release months must strictly increase, got {months}")
        if months[0] < 0:
            raise ValueError("release months must be non-negative")
        if self.horizon_months <= months[-1]:
            raise ValueError(
                f"horizon_months={self.horizon_months} does not cover last release month {months[-1]}"
            )
        if not self.eval_events:
            object.__setattr__(self, "eval_events", default_eval_events(months, self.horizon_months))
        else:
            events = tuple(sorted(set(int(e) for e in self.eval_events)))
            missing = set(months) | {self.horizon_months - 1}
            missing -= set(events)
            if missing:
                raise ValueError(f"eval_events missing release/final months {sorted(missing)}")
            if events[-1] >= self.horizon_months:
                raise ValueError("eval event beyond horizon")
            object.__setattr__(self, "eval_events", events)

    @property
    def release_months(self) -> list[int]:
        return [g.release_month for g in self.generators]

    @property
    def first_month(self) -> int:
        return self.generators[0].release_month

    def released(self, month: int) -> list[GeneratorSpec]:
        """Generators released by ``month``, newest first."""
        return [g for g in reversed(self.generators) if g.release_month <= month]

    def released_at_events(self) -> list[int]:
        """Index into eval_events of each generator's release."""
        return [self.eval_events.index(m) for m in self.release_months]

    def by_id(self, gen_id: int) -> GeneratorSpec:
        for g in self.generators:
            if g.id == gen_id:
                return g
        raise KeyError(gen_id)

    def to_dict(self) -> dict:
        return {
            "generators": [g.to_dict() for g in self.generators],
            "horizon_months": self.horizon_months,
            "eval_events": list(self.eval_events),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReleaseSchedule":
        return cls(
            generators=tuple(GeneratorSpec.from_dict(g) for g in d["generators"]),
            horizon_months=int(d["horizon_months"]),
            eval_events=tuple(d.get("eval_events", ())),
        )


def default_eval_events(release_months: Sequence[int], horizon_months: int) -> tuple[int, ...]:
    return tuple(sorted(set(release_months) | {horizon_months - 1}))


def default_release_months(n_generators: int, horizon_months: int = DEFAULT_HORIZON) -> list[int]:
    if n_generators == len(DEFAULT_RELEASE_MONTHS) and horizon_months == DEFAULT_HORIZON:
        return list(DEFAULT_RELEASE_MONTHS)
    months = [int(round(i * horizon_months / n_generators)) for i in range(n_generators)]
    if any(b <= a for a, b in zip(months, months[1:])):
        raise ValueError(f"cannot spread {n_generators} releases over {horizon_months} months")
    return months


def build_registry(
    n_generators: int,
    dim: int,
    strength: float,
    seed: int,
    *,
    noise_scale: float = 0.5,
    release_months: Sequence[int] | None = None,
    horizon_months: int = DEFAULT_HORIZON,
) -> list[GeneratorSpec]:
    """Generators with mutually orthogonal signatures (Gram-Schmidt on Gaussian draws)."""
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if n_generators < 1:
        raise ValueError(f"n_generators must be >= 1, got {n_generators}")
    if n_generators > dim:
        raise ValueError(f"cannot fit {n_generators} orthogonal signatures in dim {dim}")
    if strength <= 0:
        raise ValueError(f"strength must be positive, got {strength}")
    if noise_scale < 0:
        raise ValueError(f"noise_scale must be >= 0, got {noise_scale}")
    if release_months is None:
        release_months = default_release_months(n_generators, horizon_months)
    if len(release_months) != n_generators:
        raise ValueError("one release month per generator required")

    rng = stream_rng(seed, STREAM_REGISTRY)
    raw = rng.standard_normal((dim, n_generators))
    # QR is Gram-Schmidt done stably; columns are orthonormal.
    q, r = np.linalg.qr(raw)
    q = q * np.sign(np.diag(r))
    return [
        GeneratorSpec(
            id=i,
            release_month=int(release_months[i]),
            signature=np.ascontiguousarray(q[:, i]),
            strength=float(strength),
            noise_scale=float(noise_scale),
        )
        for i in range(n_generators)
    ]


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    origin: int | str

    def __post_init__(self):
        if (self.label == 1) != (self.origin != REAL):
            raise ValueError("label must be 1 exactly when origin is a generator id")


@dataclass(frozen=True)
class Batch:
    """Class-balanced batch held as arrays; ``samples`` gives the per-sample view."""

    features: np.ndarray
    labels: np.ndarray
    source_dataset: int

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def samples(self) -> Iterator[LabeledSample]:
        for x, y in zip(self.features, self.labels):
            yield LabeledSample(x, int(y), self.source_dataset if y == 1 else REAL)


def draw_real(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.standard_normal((n, dim))


def draw_fake(gen: GeneratorSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    x = rng.standard_normal((n, gen.dim))
    x += gen.strength * gen.signature
    if gen.noise_scale > 0:
        x += gen.noise_scale * rng.standard_normal((n, gen.dim))
    return x


def sample_real(dim: int, rng: np.random.Generator) -> LabeledSample:
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    return LabeledSample(draw_real(rng, 1, dim)[0], 0, REAL)


def sample_fake(gen: GeneratorSpec, rng: np.random.Generator) -> LabeledSample:
    return LabeledSample(draw_fake(gen, rng, 1)[0], 1, gen.id)


def selection_probabilities(n_released: int) -> np.ndarray:
    """Exponentially decaying selection weights, index 0 = most recent dataset."""
    if n_released < 1:
        raise ValueError(f"need at least one released dataset, got {n_released}")
    w = 0.5 * 0.5 ** np.arange(n_released, dtype=np.float64)
    return w / w.sum()


@lru_cache(maxsize=None)
def _selection_cdf(n_released: int) -> np.ndarray:
    cdf = selection_probabilities(n_released).cumsum()
    return cdf / cdf[-1]


def select_dataset(month: int, schedule: ReleaseSchedule, rng: np.random.Generator) -> int:
    released = schedule.released(month)
    if not released:
        raise ValueError(f"no generator released by month {month}")
    if len(released) == 1:
        return released[0].id
    # inverse-CDF draw; consumes the same single uniform as rng.choice(p=...)
    idx = int(_selection_cdf(len(released)).searchsorted(rng.random(), side="right"))
    return released[idx].id


def extract_batch(
    gen_id: int, schedule: ReleaseSchedule, batch_size: int, rng: np.random.Generator
) -> Batch:
    if batch_size < 2 or batch_size % 2:
        raise ValueError(f"batch_size must be even and >= 2, got {batch_size}")
    gen = schedule.by_id(gen_id)
    half = batch_size // 2
    x = np.empty((batch_size, gen.dim))
    x[:half] = draw_real(rng, half, gen.dim)
    x[half:] = draw_fake(gen, rng, half)
    y = np.repeat(np.array([0.0, 1.0]), half)
    return Batch(x, y, gen_id)


def make_eval_set(gen: GeneratorSpec, n_per_class: int, rng: np.random.Generator) -> Batch:
    """Held-out set for one generator; ``rng`` should come from the eval stream."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    x = np.vstack([draw_real(rng, n_per_class, gen.dim), draw_fake(gen, rng, n_per_class)])
    y = np.repeat(np.array([0.0, 1.0]), n_per_class)
    return Batch(x, y, gen.id)


def make_eval_sets(schedule: ReleaseSchedule, n_per_class: int, seed: int) -> list[Batch]:
    rng = stream_rng(seed, STREAM_EVAL)
    return [make_eval_set(g, n_per_class, rng) for g in schedule.generators]
