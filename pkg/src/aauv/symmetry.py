"""Permutation averages of the order-sensitive variance estimators.

Averaging an AAUV (or any ``s_lambda**2``) over every reordering of the
sample gives back the usual unbiased variance ``s**2``.  The exact mode
enumerates all ``N!`` orderings; the sampled mode draws random orderings and
reports a standard error.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .estimators import (
    DEFAULT_TOL,
    CoefficientVector,
    Estimator,
    _coeffs,
    _values,
    unbiased_variance,
)

__all__ = [
    "EXACT_MAX_N",
    "PermutationAverageResult",
    "permutation_average_exact",
    "permutation_average_lambda_exact",
    "permutation_average_sampled",
]

EXACT_MAX_N = 8
SAMPLED_CHUNK = 1 << 14


@dataclass(frozen=True)
class PermutationAverageResult:
    q: float
    mode: str
    permutations_used: int
    reference_s2: float
    stderr: Optional[float] = None
    lam: Optional[float] = None

    @property
    def difference(self) -> float:
        return self.q - self.reference_s2


@lru_cache(maxsize=None)
def _all_permutations(n: int) -> np.ndarray:
    # itertools.permutations over range(n) yields lexicographic order
    perms = np.fromiter(
        itertools.chain.from_iterable(itertools.permutations(range(n))),
        dtype=np.intp,
        count=math.factorial(n) * n,
    ).reshape(-1, n)
    perms.flags.writeable = False
    return perms


def _estimator(c, lam: Optional[float], tol: float) -> Estimator:
    c = _coeffs(c)
    if lam is None:
        return Estimator("aauv", c, tol=tol)
    return Estimator("interpolated", c, lam=float(lam), tol=tol)


def _exact(x, c, lam, tol) -> PermutationAverageResult:
    vals = np.array(_values(x, min_n=2))
    n = vals.size
    if n > EXACT_MAX_N:
        raise ValueError(
            f"exact permutation average is capped at N <= {EXACT_MAX_N} (got N = {n}); "
            "use the sampled mode instead"
        )
    est = _estimator(c, lam, tol)
    if est.n != n:
        raise ValueError(f"length mismatch: sample has N = {n}, coefficients have {est.n}")
    terms = est.rows(vals[_all_permutations(n)])
    q = math.fsum(terms) / terms.size
    return PermutationAverageResult(
        q=q,
        mode="exact",
        permutations_used=terms.size,
        reference_s2=unbiased_variance(vals).estimate,
        lam=None if lam is None else float(lam),
    )


def permutation_average_exact(
    x: Sequence[float], c: CoefficientVector, tol: float = DEFAULT_TOL
) -> PermutationAverageResult:
    """Average of ``aauv(x o pi, c)`` over all ``N!`` permutations ``pi``."""
    return _exact(x, c, None, tol)


def permutation_average_lambda_exact(
    x: Sequence[float], c: CoefficientVector, lam: float, tol: float = DEFAULT_TOL
) -> PermutationAverageResult:
    """Average of ``interpolated_variance(x o pi, c, lam)`` over all permutations."""
    return _exact(x, c, lam, tol)


def permutation_average_sampled(
    x: Sequence[float],
    c: CoefficientVector,
    lam: Optional[float] = None,
    reps: int = 100_000,
    seed: int = 0,
    workers: int = 1,
    tol: float = DEFAULT_TOL,
) -> PermutationAverageResult:
    """Monte Carlo permutation average over ``reps`` uniform random orderings.

    Orderings are drawn in fixed-size chunks; chunk ``k`` shuffles with its
    own generator seeded from ``(seed, k)``, so the result does not depend on
    ``workers``.
    """
    if reps < 2:
        raise ValueError(f"sampled permutation average needs reps >= 2, got {reps}")
    vals = np.array(_values(x, min_n=2))
    n = vals.size
    est = _estimator(c, lam, tol)
    if est.n != n:
        raise ValueError(f"length mismatch: sample has N = {n}, coefficients have {est.n}")

    bounds = [(lo, min(lo + SAMPLED_CHUNK, reps)) for lo in range(0, reps, SAMPLED_CHUNK)]

    def run(k: int) -> np.ndarray:
        lo, hi = bounds[k]
        rng = np.random.default_rng([int(seed) & (2**64 - 1), k])
        idx = rng.permuted(np.tile(np.arange(n), (hi - lo, 1)), axis=1)
        return est.rows(vals[idx])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(bounds))))
    else:
        parts = [run(k) for k in range(len(bounds))]
    terms = np.concatenate(parts)

    q = math.fsum(terms) / reps
    var = math.fsum((terms - q) ** 2) / (reps - 1)
    return PermutationAverageResult(
        q=q,
        mode="sampled",
        permutations_used=reps,
        reference_s2=unbiased_variance(vals).estimate,
        stderr=math.sqrt(var / reps),
        lam=None if lam is None else float(lam),
    )
