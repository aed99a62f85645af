"""Truth engines for the estimators: exact enumeration and seeded Monte Carlo.

Exact enumeration sums an estimator over every outcome of ``n`` i.i.d. draws
from a finite discrete law, weighted by the outcome probability.  The Monte
Carlo harness draws ``reps`` replicate samples from a named distribution and
reports bias, its standard error and the spread of the estimator.

Random numbers come from a counter-based SplitMix64 construction.  Replicate
``r`` of a run with master seed ``s`` owns the stream::

    key_r  = mix64(mix64(s) + (r + 1) * GAMMA)
    word_j = mix64(key_r + (j + 1) * GAMMA)        j = 0, 1, ...

where ``mix64`` is the SplitMix64 finaliser and ``GAMMA = 0x9E3779B97F4A7C15``.
A 64-bit word becomes a uniform double in ``[0, 1)`` via its top 53 bits.
Normal variates use the Box-Muller transform on consecutive word pairs
``(u1, u2)``: ``sqrt(-2 log(1 - u1)) * (cos, sin)(2 pi u2)``.  Exponential
variates are ``-log(1 - u) / rate``; discrete draws invert the CDF.  Since
every draw is a pure function of ``(seed, r, j)``, results do not depend on
how replicates are split across workers.
"""

from __future__ import annotations

import itertools
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .estimators import Estimator

__all__ = [
    "ENUMERATION_CAP",
    "DistributionSpec",
    "DistributionParseError",
    "ExperimentResult",
    "PairedComparison",
    "draw_samples",
    "exact_expectation",
    "paired_variance_difference",
    "parse_distribution",
    "run_bias_experiment",
    "run_variance_comparison",
    "uniform_words",
]

ENUMERATION_CAP = 10**6
MIN_REPS = 100
REPLICATE_CHUNK = 1 << 15

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform_words(seed: int, replicates: np.ndarray, count: int) -> np.ndarray:
    """Uniform doubles in ``[0, 1)``, shape ``(len(replicates), count)``."""
    with np.errstate(over="ignore"):
        base = _mix64(np.array([int(seed) & _MASK64], dtype=np.uint64))
        r = np.asarray(replicates, dtype=np.uint64)
        keys = _mix64(base + (r + np.uint64(1)) * _GAMMA)
        j = np.arange(1, count + 1, dtype=np.uint64) * _GAMMA
        words = _mix64(keys[:, None] + j[None, :])
    return (words >> np.uint64(11)).astype(np.float64) * 2.0**-53


class DistributionParseError(ValueError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position} in {text!r}")


@dataclass(frozen=True)
class DistributionSpec:
    """A named distribution with its first three central moments.

    ``params`` holds ``mu, sd`` (normal), ``a, b`` (uniform), ``rate``
    (exponential) or ``values, probs`` (discrete, as tuples).
    """

    kind: str
    params: dict = field(compare=False)
    mu: float = 0.0
    sigma2: float = 0.0
    mu3: float = 0.0

    @property
    def degenerate(self) -> bool:
        return self.sigma2 == 0.0

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    def target(self, moment: int) -> float:
        return self.sigma2 if moment == 2 else self.mu3

    @property
    def label(self) -> str:
        if self.kind == "discrete":
            v = "|".join(repr(x) for x in self.params["values"])
            p = "|".join(repr(x) for x in self.params["probs"])
            return f"discrete:values={v},probs={p}"
        return self.kind + ":" + ",".join(f"{k}={v!r}" for k, v in self.params.items())

    @classmethod
    def normal(cls, mu: float = 0.0, sd: float = 1.0) -> "DistributionSpec":
        if not (math.isfinite(mu) and math.isfinite(sd)) or sd <= 0:
            raise ValueError(f"normal needs finite mu and sd > 0, got mu={mu}, sd={sd}")
        return cls("normal", {"mu": mu, "sd": sd}, mu, sd * sd, 0.0)

    @classmethod
    def uniform(cls, a: float = 0.0, b: float = 1.0) -> "DistributionSpec":
        if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
            raise ValueError(f"uniform needs finite a < b, got a={a}, b={b}")
        return cls("uniform", {"a": a, "b": b}, (a + b) / 2, (b - a) ** 2 / 12, 0.0)

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "DistributionSpec":
        if not math.isfinite(rate) or rate <= 0:
            raise ValueError(f"exponential needs rate > 0, got {rate}")
        return cls("exponential", {"rate": rate}, 1 / rate, 1 / rate**2, 2 / rate**3)

    @classmethod
    def discrete(cls, values: Sequence[float], probs: Sequence[float]) -> "DistributionSpec":
        values = tuple(float(v) for v in values)
        probs = tuple(float(p) for p in probs)
        if not values or len(values) != len(probs):
            raise ValueError("discrete needs equally many values and probabilities")
        if len(set(values)) != len(values):
            raise ValueError("discrete support values must be distinct")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("discrete support values must be finite")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise ValueError("discrete probabilities must be >= 0")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ValueError(f"discrete probabilities sum to {math.fsum(probs)!r}, not 1")
        mu = math.fsum(p * v for p, v in zip(probs, values))
        sigma2 = math.fsum(p * (v - mu) ** 2 for p, v in zip(probs, values))
        mu3 = math.fsum(p * (v - mu) ** 3 for p, v in zip(probs, values))
        return cls("discrete", {"values": values, "probs": probs}, mu, sigma2, mu3)

    def sample(self, u: np.ndarray, n: int) -> np.ndarray:
        """Map a ``(reps, k)`` array of uniforms to ``(reps, n)`` variates."""
        if self.kind == "normal":
            pairs = (n + 1) // 2
            u1, u2 = u[:, 0 : 2 * pairs : 2], u[:, 1 : 2 * pairs : 2]
            radius = np.sqrt(-2.0 * np.log1p(-u1))
            angle = 2.0 * math.pi * u2
            z = np.empty((u.shape[0], 2 * pairs))
            z[:, 0::2] = radius * np.cos(angle)
            z[:, 1::2] = radius * np.sin(angle)
            return self.params["mu"] + self.params["sd"] * z[:, :n]
        u = u[:, :n]
        if self.kind == "uniform":
            a, b = self.params["a"], self.params["b"]
            return a + (b - a) * u
        if self.kind == "exponential":
            return -np.log1p(-u) / self.params["rate"]
        values = np.array(self.params["values"])
        cdf = np.cumsum(self.params["probs"])
        idx = np.searchsorted(cdf, u, side="right")
        return values[np.minimum(idx, values.size - 1)]

    def uniforms_needed(self, n: int) -> int:
        return 2 * ((n + 1) // 2) if self.kind == "normal" else n


_KINDS = {
    "normal": ("mu", "sd"),
    "uniform": ("a", "b"),
    "exponential": ("rate",),
    "discrete": ("values", "probs"),
}
_DECIMAL = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")


def parse_distribution(text: str) -> DistributionSpec:
    """Parse ``kind:key=value[,key=value...]`` into a :class:`DistributionSpec`.

    >>> parse_distribution("exponential:rate=2").mu3
    0.25
    """
    kind, sep, rest = text.partition(":")
    kind = kind.strip()
    if kind not in _KINDS:
        raise DistributionParseError(f"unknown distribution kind {kind!r}", text, 0)
    if not sep:
        raise DistributionParseError("expected ':' after kind", text, len(kind))

    params: dict = {}
    pos = len(kind) + 1
    for item in rest.split(","):
        key, eq, value = item.partition("=")
        key = key.strip()
        if not eq:
            raise DistributionParseError(f"expected key=value, got {item!r}", text, pos)
        if key not in _KINDS[kind]:
            raise DistributionParseError(f"unknown parameter {key!r} for {kind}", text, pos)
        if key in params:
            raise DistributionParseError(f"duplicate parameter {key!r}", text, pos)
        vpos = pos + len(item) - len(value)
        parts = value.split("|") if kind == "discrete" else [value]
        if kind != "discrete" and "|" in value:
            raise DistributionParseError(f"{key} takes a single value", text, vpos)
        nums = []
        for part in parts:
            if not _DECIMAL.fullmatch(part.strip()):
                raise DistributionParseError(f"invalid decimal {part!r}", text, vpos)
            nums.append(float(part))
            vpos += len(part) + 1
        params[key] = tuple(nums) if kind == "discrete" else nums[0]
        pos += len(item) + 1

    missing = [k for k in _KINDS[kind] if k not in params]
    if missing:
        raise DistributionParseError(f"missing parameter(s) {', '.join(missing)}", text, len(text))
    try:
        return getattr(DistributionSpec, kind)(**params)
    except ValueError as exc:
        raise DistributionParseError(str(exc), text, len(kind) + 1) from None


def exact_expectation(dist: DistributionSpec, n: int, estimator: Estimator) -> float:
    """Exact ``E[estimator]`` over all ``support**n`` outcomes of a discrete law."""
    if not dist.is_discrete:
        raise ValueError("enumeration requires discrete distribution")
    values = np.array(dist.params["values"])
    probs = np.array(dist.params["probs"])
    size = values.size**n
    if size > ENUMERATION_CAP:
        raise ValueError(
            f"enumeration cap exceeded: {values.size}**{n} = {size} > {ENUMERATION_CAP}"
        )
    idx = np.array(list(itertools.product(range(values.size), repeat=n)), dtype=np.intp)
    idx = idx.reshape(size, n)
    weights = np.prod(probs[idx], axis=1)
    terms = weights * estimator.rows(values[idx])
    return math.fsum(terms)


@dataclass(frozen=True)
class ExperimentResult:
    estimator: str
    dist: str
    n: int
    reps: int
    seed: int
    target: float
    empirical_mean: float
    empirical_bias: float
    bias_stderr: float
    empirical_variance_of_estimator: float
    estimates: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "dist": self.dist,
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "target": self.target,
            "empirical_mean": self.empirical_mean,
            "empirical_bias": self.empirical_bias,
            "bias_stderr": self.bias_stderr,
            "empirical_variance_of_estimator": self.empirical_variance_of_estimator,
        }


def draw_samples(dist: DistributionSpec, n: int, seed: int, start: int, stop: int) -> np.ndarray:
    """Replicate samples ``start..stop-1`` as rows of an ``(stop-start, n)`` array."""
    u = uniform_words(seed, np.arange(start, stop), dist.uniforms_needed(n))
    return dist.sample(u, n)


def _summarize(est: Estimator, dist: DistributionSpec, n, reps, seed, values) -> ExperimentResult:
    target = dist.target(est.moment)
    mean = math.fsum(values) / reps
    var = math.fsum((values - mean) ** 2) / (reps - 1)
    return ExperimentResult(
        estimator=est.label,
        dist=dist.label,
        n=n,
        reps=reps,
        seed=seed,
        target=target,
        empirical_mean=mean,
        empirical_bias=mean - target,
        bias_stderr=math.sqrt(var / reps),
        empirical_variance_of_estimator=var,
        estimates=values,
    )


def run_variance_comparison(
    dist: DistributionSpec,
    n: int,
    reps: int,
    seed: int,
    estimators: Sequence[Estimator],
    workers: int = 1,
) -> list[ExperimentResult]:
    """Evaluate every estimator on the same ``reps`` replicate samples.

    Replicates are generated in fixed chunks; ``workers`` only changes how
    chunks are scheduled, never the numbers.
    """
    if reps < MIN_REPS:
        raise ValueError(f"reps >= {MIN_REPS} required, got {reps}")
    if n < 2:
        raise ValueError(f"n >= 2 required, got {n}")
    for est in estimators:
        if est.n is not None and est.n != n:
            raise ValueError(f"{est.label} has {est.n} coefficients but n = {n}")

    bounds = [(lo, min(lo + REPLICATE_CHUNK, reps)) for lo in range(0, reps, REPLICATE_CHUNK)]

    def run(bound):
        X = draw_samples(dist, n, seed, *bound)
        return [est.rows(X) for est in estimators]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]

    return [
        _summarize(est, dist, n, reps, seed, np.concatenate([p[i] for p in parts]))
        for i, est in enumerate(estimators)
    ]


def run_bias_experiment(
    dist: DistributionSpec,
    n: int,
    reps: int,
    seed: int,
    estimator: Estimator,
    workers: int = 1,
) -> ExperimentResult:
    return run_variance_comparison(dist, n, reps, seed, [estimator], workers)[0]


@dataclass(frozen=True)
class PairedComparison:
    """Paired estimate of ``Var(a) - Var(b)`` from common replicate samples."""

    difference: float
    stderr: float

    @property
    def z(self) -> float:
        return self.difference / self.stderr if self.stderr > 0 else math.copysign(math.inf, self.difference)


def paired_variance_difference(a: ExperimentResult, b: ExperimentResult) -> PairedComparison:
    """Compare estimator spreads replicate by replicate.

    Each replicate contributes ``(a_r - mean_a)**2 - (b_r - mean_b)**2``;
    the mean of these is the variance difference and their standard error
    is the paired standard error.
    """
    if a.estimates is None or b.estimates is None:
        raise ValueError("paired comparison needs per-replicate estimates")
    if a.seed != b.seed or a.reps != b.reps or a.dist != b.dist or a.n != b.n:
        raise ValueError("paired comparison needs results from the same replicate samples")
    d = (a.estimates - a.empirical_mean) ** 2 - (b.estimates - b.empirical_mean) ** 2
    reps = d.size
    mean = math.fsum(d) / reps
    var = math.fsum((d - mean) ** 2) / (reps - 1)
    # rescale so the mean matches the ddof=1 variances stored on the results
    scale = reps / (reps - 1)
    return PairedComparison(mean * scale, math.sqrt(var / reps) * scale)
