"""Scalar helpers, seeded random streams and summary statistics."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .exceptions import ConfigError, DomainError

__all__ = [
    "RngStream",
    "SummaryStat",
    "as_rng_stream",
    "sigmoid",
    "logit",
    "summarize",
    "trim",
]

_MASK64 = (1 << 64) - 1


def sigmoid(z):
    """Logistic function, stable for large ``|z|``.

    Accepts scalars or arrays; returns the same kind.
    """
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("sigmoid requires finite input")
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ez = np.exp(arr[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("logit requires values strictly inside (0, 1)")
    out = np.log(p) - np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def trim(u, eta):
    """Clamp ``u`` into ``[eta, 1 - eta]``."""
    if not 0.0 < eta < 0.5:
        raise ConfigError(f"trim level must lie in (0, 0.5), got {eta}")
    out = np.clip(np.asarray(u, dtype=float), eta, 1.0 - eta)
    return float(out) if out.ndim == 0 else out


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ConfigError("stream labels must be nonnegative")
        return int(label) & _MASK64
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    raise ConfigError(f"unsupported stream label {label!r}")


@dataclass(frozen=True)
class RngStream:
    """A reproducible, splittable random stream.

    ``(seed, stream_id)`` fully determines the draws.  Sub-streams are derived
    with :meth:`substream`, which mixes labels into a new ``stream_id`` so that
    results never depend on the order tasks are scheduled in.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= value <= _MASK64:
                raise ConfigError(f"{name} must be a 64-bit unsigned integer, got {value!r}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(seq))

    def substream(self, *labels) -> "RngStream":
        """Child stream identified by ``labels`` (ints or strings)."""
        words = [int(self.stream_id)] + [_label_to_int(lab) for lab in labels]
        mixed = np.random.SeedSequence(entropy=words).generate_state(1, dtype=np.uint64)[0]
        return RngStream(int(self.seed), int(mixed))

    def int_seed(self) -> int:
        """A 32-bit integer seed for APIs that only accept ints."""
        return int(self.generator().integers(0, 2**31 - 1))


RngLike = Union[RngStream, int, None]


def as_rng_stream(rng: RngLike) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise ConfigError(f"cannot interpret {rng!r} as a random stream")


@dataclass(frozen=True)
class SummaryStat:
    mean: float
    variance: float
    n: int
    degenerate: bool = False

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "variance": self.variance, "std": self.std, "n": self.n,
                "degenerate": self.degenerate}


def summarize(values: Iterable[float]) -> SummaryStat:
    """Mean and unbiased variance (divisor ``n - 1``).

    A single value yields variance 0 with ``degenerate=True``.
    """
    arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    arr = arr.ravel()
    if arr.size == 0:
        raise DomainError("summarize needs at least one value")
    if not np.all(np.isfinite(arr)):
        raise DomainError("summarize received a non-finite value")
    if arr.size == 1:
        return SummaryStat(float(arr[0]), 0.0, 1, degenerate=True)
    return SummaryStat(float(arr.mean()), float(arr.var(ddof=1)), int(arr.size))
