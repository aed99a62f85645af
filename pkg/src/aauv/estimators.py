"""Variance and third-moment estimators built on weighted mean estimators.

A weighted mean ``X_hat = sum(c_n * x_n)`` can replace the sample mean inside
the sum of squared deviations.  When the weights satisfy::

    sum(c) == 1
    sum(c**2) == 2 / N

the average-adjusted estimator ``(1/N) * sum((x_n - X_hat)**2)`` is unbiased
for the population variance even though it divides by ``N``.  This module
holds the scalar estimators, the coefficient constructions, the feasibility
checkers and row-wise (batched) versions used by the verification engines.

All sums over samples and coefficients go through :func:`math.fsum`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "DEFAULT_TOL",
    "ESTIMATOR_IDS",
    "CoefficientVector",
    "EstimateReport",
    "Estimator",
    "InfeasibleCoefficientsError",
    "aauv",
    "aauv_raw",
    "check_order2_conditions",
    "check_order3_conditions",
    "coeff_bound",
    "coeffs_half_sample",
    "coeffs_m_block",
    "coeffs_random_feasible",
    "coeffs_third_family",
    "interpolated_mean",
    "interpolated_variance",
    "lambda_for_denominator",
    "naive_variance",
    "pairwise_product_sum",
    "sample_mean",
    "third_moment_estimator",
    "third_moment_raw",
    "unbiased_variance",
    "weighted_mean",
]

DEFAULT_TOL = 1e-9

ESTIMATOR_IDS = ("naive", "unbiased", "aauv", "interpolated", "third_moment")


class InfeasibleCoefficientsError(ValueError):
    """Coefficients violate the unbiasedness conditions of the requested order."""

    def __init__(self, order: int, residuals: tuple[float, float], tol: float):
        self.order = order
        self.residuals = residuals
        self.tol = tol
        names = ("sum", "sumsq") if order == 2 else ("sum", "k3")
        detail = ", ".join(f"{k}={v!r}" for k, v in zip(names, residuals))
        super().__init__(
            f"coefficients are not order-{order} feasible "
            f"(residuals {detail}; tolerance {tol!r})"
        )


@dataclass(frozen=True)
class CoefficientVector:
    """Weights ``c_1..c_N`` for a weighted mean, tagged with a moment order.

    ``order`` is 2 for variance estimators and 3 for the third central
    moment; it selects which condition set :meth:`residuals` evaluates.
    """

    c: tuple[float, ...]
    order: int = 2
    provenance: str = field(default="", compare=False)

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        object.__setattr__(self, "c", c)
        if self.order not in (2, 3):
            raise ValueError(f"order must be 2 or 3, got {self.order!r}")
        if not c:
            raise ValueError("empty coefficient vector")
        if not all(math.isfinite(v) for v in c):
            raise ValueError("coefficients must be finite")

    @property
    def n(self) -> int:
        return len(self.c)

    def __len__(self) -> int:
        return len(self.c)

    def as_array(self) -> np.ndarray:
        return np.array(self.c, dtype=float)

    def residuals(self) -> tuple[float, float]:
        if self.order == 2:
            return check_order2_conditions(self)
        return check_order3_conditions(self)

    def is_feasible(self, tol: float = DEFAULT_TOL) -> bool:
        return all(abs(r) <= tol for r in self.residuals())

    def require_feasible(self, tol: float = DEFAULT_TOL) -> None:
        if not self.is_feasible(tol):
            raise InfeasibleCoefficientsError(self.order, self.residuals(), tol)

    def with_order(self, order: int) -> "CoefficientVector":
        return CoefficientVector(self.c, order, self.provenance)


@dataclass(frozen=True)
class EstimateReport:
    """The numeric estimate plus everything needed to reproduce it."""

    estimator_id: str
    estimate: float
    n: int
    lam: Optional[float] = None
    coefficients: Optional[CoefficientVector] = None

    def __post_init__(self):
        if self.estimator_id not in ESTIMATOR_IDS:
            raise ValueError(f"unknown estimator id {self.estimator_id!r}")
        if (self.lam is not None) != (self.estimator_id == "interpolated"):
            raise ValueError("lambda is carried by interpolated estimates only")
        needs_c = self.estimator_id in ("aauv", "interpolated", "third_moment")
        if (self.coefficients is not None) != needs_c:
            raise ValueError(
                f"coefficients {'required' if needs_c else 'not allowed'} "
                f"for {self.estimator_id}"
            )

    def __float__(self) -> float:
        return self.estimate


def _values(x: Sequence[float], min_n: int = 1) -> tuple[float, ...]:
    vals = tuple(float(v) for v in x)
    if not vals:
        raise ValueError("empty sample")
    if len(vals) < min_n:
        raise ValueError(f"degenerate sample: need N >= {min_n}, got N = {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("sample values must be finite")
    return vals


def _coeffs(c) -> CoefficientVector:
    if isinstance(c, CoefficientVector):
        return c
    return CoefficientVector(tuple(c))


def _check_lengths(vals, c: CoefficientVector) -> None:
    if len(vals) != c.n:
        raise ValueError(
            f"length mismatch: sample has N = {len(vals)}, coefficients have {c.n}"
        )


def sample_mean(x: Sequence[float]) -> float:
    vals = _values(x)
    return math.fsum(vals) / len(vals)


def _shifted(vals: tuple[float, ...]) -> tuple[float, ...]:
    # Deviations from a weighted mean with sum(c) == 1 are shift invariant;
    # anchoring at the first value removes a common offset before summing.
    return tuple(v - vals[0] for v in vals)


def _sum_sq_dev(vals, center: float) -> float:
    return math.fsum((v - center) ** 2 for v in vals)


def naive_variance(x: Sequence[float]) -> EstimateReport:
    """Sum of squared deviations from the sample mean divided by ``N``.

    Biased low by a factor ``(N-1)/N``.  Defined for ``N = 1`` (returns 0).
    """
    vals = _shifted(_values(x))
    n = len(vals)
    est = _sum_sq_dev(vals, math.fsum(vals) / n) / n
    return EstimateReport("naive", est, n)


def unbiased_variance(x: Sequence[float]) -> EstimateReport:
    vals = _shifted(_values(x, min_n=2))
    n = len(vals)
    est = _sum_sq_dev(vals, math.fsum(vals) / n) / (n - 1)
    return EstimateReport("unbiased", est, n)


def weighted_mean(x: Sequence[float], c) -> float:
    vals = _values(x)
    c = _coeffs(c)
    _check_lengths(vals, c)
    return math.fsum(ci * xi for ci, xi in zip(c.c, vals))


def aauv_raw(x: Sequence[float], c) -> float:
    """AAUV formula with no feasibility gate.

    Exploratory only: for coefficients violating the order-2 conditions the
    result is NOT an unbiased estimate of the variance.
    """
    vals = _values(x)
    c = _coeffs(c)
    _check_lengths(vals, c)
    xhat = math.fsum(ci * xi for ci, xi in zip(c.c, vals))
    return _sum_sq_dev(vals, xhat) / len(vals)


def aauv(x: Sequence[float], c, tol: float = DEFAULT_TOL) -> EstimateReport:
    """Average-adjusted unbiased variance ``(1/N) * sum((x_n - X_hat)**2)``.

    Raises :class:`InfeasibleCoefficientsError` unless ``c`` satisfies the
    order-2 conditions within ``tol``.
    """
    c = _coeffs(c)
    vals = _values(x, min_n=2)
    _check_lengths(vals, c)
    c.with_order(2).require_feasible(tol)
    return EstimateReport("aauv", aauv_raw(_shifted(vals), c), len(vals), coefficients=c)


def check_order2_conditions(c) -> tuple[float, float]:
    """Return ``(sum(c) - 1, sum(c**2) - 2/N)``."""
    c = _coeffs(c)
    n = c.n
    return (
        math.fsum(c.c) - 1.0,
        math.fsum(ci * ci for ci in c.c) - 2.0 / n,
    )


def check_order3_conditions(c) -> tuple[float, float]:
    """Return ``(sum(c) - 1, (3/N)*sum(c**2) - sum(c**3) - 3/N)``."""
    c = _coeffs(c)
    n = c.n
    return (
        math.fsum(c.c) - 1.0,
        math.fsum(
            [3.0 / n * ci * ci for ci in c.c]
            + [-(ci**3) for ci in c.c]
            + [-3.0 / n]
        ),
    )


def _require_int(name: str, value) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    return int(value)


def coeffs_half_sample(n: int) -> CoefficientVector:
    n = _require_int("n", n)
    if n < 2 or n % 2:
        raise ValueError("half-sample requires even N")
    half = n // 2
    c = (2.0 / n,) * half + (0.0,) * half
    return CoefficientVector(c, 2, f"half n={n}")


def coeffs_m_block(n: int, m: int) -> CoefficientVector:
    """Two-level weights: ``m`` leading entries share one value, the rest another."""
    n = _require_int("n", n)
    m = _require_int("m", m)
    if not 1 <= m < n:
        raise ValueError(f"m-block requires 1 <= m < n, got n={n}, m={m}")
    root = math.sqrt(m * (n - m))
    head = (m + root) / (n * m)
    tail = (n - m - root) / (n * (n - m))
    return CoefficientVector((head,) * m + (tail,) * (n - m), 2, f"m-block n={n} m={m}")


def coeffs_random_feasible(n: int, seed: int) -> CoefficientVector:
    """Uniform draw from the sphere ``{sum(c) = 1, sum(c**2) = 2/N}``.

    The sphere is centred on the uniform weights ``1/N`` with radius
    ``sqrt(1/N)`` inside the hyperplane orthogonal to the all-ones vector.
    A standard Gaussian vector projected onto that hyperplane gives an
    isotropic direction.
    """
    n = _require_int("n", n)
    if n < 2:
        raise ValueError(f"random feasible coefficients require n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    while True:
        g = rng.standard_normal(n)
        d = g - math.fsum(g) / n
        norm = math.sqrt(math.fsum(d * d))
        if norm > 1e-8:
            break
    d *= math.sqrt(1.0 / n) / norm
    # fold the tiny residual sum of d back so the weights sum to 1 as exactly as possible
    d -= math.fsum(d) / n
    c = 1.0 / n + d
    return CoefficientVector(tuple(c.tolist()), 2, f"random n={n} seed={seed}")


def coeff_bound(n: int) -> tuple[float, float]:
    """Interval containing every weight of an order-2 feasible vector of length ``n``."""
    n = _require_int("n", n)
    if n < 2:
        raise ValueError(f"coefficient bound requires n >= 2, got {n}")
    r = math.sqrt(n - 1)
    return (1.0 - r) / n, (1.0 + r) / n


def pairwise_product_sum(c) -> float:
    """``sum_{n != m} c_n c_m``; equals ``(N-2)/N`` for order-2 feasible weights."""
    c = _coeffs(c)
    s = math.fsum(c.c)
    return math.fsum([s * s] + [-(ci * ci) for ci in c.c])


def interpolated_mean(x: Sequence[float], c, lam: float, tol: float = DEFAULT_TOL) -> float:
    c = _coeffs(c)
    vals = _values(x)
    _check_lengths(vals, c)
    c.with_order(2).require_feasible(tol)
    return _interp_center(vals, c, float(lam))


def _interp_center(vals, c: CoefficientVector, lam: float) -> float:
    n = len(vals)
    xhat = math.fsum(ci * xi for ci, xi in zip(c.c, vals))
    xbar = math.fsum(vals) / n
    return lam * xhat + (1.0 - lam) * xbar


def interpolated_variance(
    x: Sequence[float], c, lam: float, tol: float = DEFAULT_TOL
) -> EstimateReport:
    """Squared deviations from ``lam*X_hat + (1-lam)*X_bar`` over ``N - 1 + lam**2``.

    Unbiased for every real ``lam``; ``lam = 0`` is the usual ``s**2`` and
    ``lam = 1`` the AAUV.
    """
    c = _coeffs(c)
    lam = float(lam)
    if not math.isfinite(lam):
        raise ValueError("lambda must be finite")
    vals = _values(x, min_n=2)
    _check_lengths(vals, c)
    c.with_order(2).require_feasible(tol)
    n = len(vals)
    vals = _shifted(vals)
    center = _interp_center(vals, c, lam)
    est = _sum_sq_dev(vals, center) / (n - 1 + lam * lam)
    return EstimateReport("interpolated", est, n, lam=lam, coefficients=c)


def lambda_for_denominator(k: float, n: int) -> float:
    """The ``lam`` giving :func:`interpolated_variance` the denominator ``k``."""
    n = _require_int("n", n)
    if k < n - 1:
        raise ValueError(f"denominator below N-1 unreachable (k={k!r}, N={n})")
    return math.sqrt(k - n + 1)


def third_moment_raw(x: Sequence[float], c) -> float:
    """Third-moment formula with no feasibility gate (not necessarily unbiased)."""
    vals = _values(x)
    c = _coeffs(c)
    _check_lengths(vals, c)
    xhat = math.fsum(ci * xi for ci, xi in zip(c.c, vals))
    return math.fsum((v - xhat) ** 3 for v in vals) / len(vals)


def third_moment_estimator(x: Sequence[float], c, tol: float = DEFAULT_TOL) -> EstimateReport:
    c = _coeffs(c).with_order(3)
    vals = _values(x, min_n=2)
    _check_lengths(vals, c)
    c.require_feasible(tol)
    est = third_moment_raw(_shifted(vals), c)
    return EstimateReport("third_moment", est, len(vals), coefficients=c)


def coeffs_third_family(m: int, k: int) -> CoefficientVector:
    """Order-3 feasible weights ``(alpha,)*m + (-alpha,)*m + (1/k,)*k``.

    The sample size is ``n = 2*m + k``.
    """
    m = _require_int("m", m)
    k = _require_int("k", k)
    if m < 1 or k < 1:
        raise ValueError(f"third-moment family requires m >= 1 and k >= 1, got m={m}, k={k}")
    n = 2 * m + k
    alpha = math.sqrt((3 * k * (k - 1) + n) / (3 * (n - k) * k * k))
    beta = 1.0 / k
    c = (alpha,) * m + (-alpha,) * m + (beta,) * k
    return CoefficientVector(c, 3, f"third m={m} k={k}")


# Row-wise versions: ``X`` has one sample per row.  Used by the permutation,
# enumeration and Monte Carlo engines, where per-row Python loops are too slow.


def _rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected a 2-D array with one sample per row")
    return X


def naive_variance_rows(X) -> np.ndarray:
    X = _rows(X)
    d = X - X.mean(axis=1, keepdims=True)
    return (d * d).sum(axis=1) / X.shape[1]


def unbiased_variance_rows(X) -> np.ndarray:
    X = _rows(X)
    d = X - X.mean(axis=1, keepdims=True)
    return (d * d).sum(axis=1) / (X.shape[1] - 1)


def aauv_rows(X, c: CoefficientVector) -> np.ndarray:
    X = _rows(X)
    d = X - (X @ c.as_array())[:, None]
    return (d * d).sum(axis=1) / X.shape[1]


def interpolated_variance_rows(X, c: CoefficientVector, lam: float) -> np.ndarray:
    X = _rows(X)
    n = X.shape[1]
    center = lam * (X @ c.as_array()) + (1.0 - lam) * X.mean(axis=1)
    d = X - center[:, None]
    return (d * d).sum(axis=1) / (n - 1 + lam * lam)


def third_moment_rows(X, c: CoefficientVector) -> np.ndarray:
    X = _rows(X)
    d = X - (X @ c.as_array())[:, None]
    return (d * d * d).sum(axis=1) / X.shape[1]


@dataclass(frozen=True)
class Estimator:
    """Descriptor naming one estimator together with its parameters.

    ``kind`` is one of :data:`ESTIMATOR_IDS`.  Calling the descriptor on a
    sample returns an :class:`EstimateReport`; :meth:`rows` evaluates many
    samples at once.
    """

    kind: str
    coefficients: Optional[CoefficientVector] = None
    lam: Optional[float] = None
    label: str = ""
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.kind not in ESTIMATOR_IDS:
            raise ValueError(f"unknown estimator {self.kind!r}")
        needs_c = self.kind in ("aauv", "interpolated", "third_moment")
        if needs_c and self.coefficients is None:
            raise ValueError(f"{self.kind} estimator needs coefficients")
        if self.kind == "interpolated" and self.lam is None:
            raise ValueError("interpolated estimator needs lambda")
        if needs_c:
            order = 3 if self.kind == "third_moment" else 2
            c = self.coefficients.with_order(order)
            c.require_feasible(self.tol)
            object.__setattr__(self, "coefficients", c)
        if not self.label:
            object.__setattr__(self, "label", self._default_label())

    def _default_label(self) -> str:
        if self.kind == "interpolated":
            return f"interp[{self.coefficients.provenance or 'c'}; lambda={self.lam!r}]"
        if self.coefficients is not None:
            return f"{self.kind}[{self.coefficients.provenance or 'c'}]"
        return self.kind

    @property
    def n(self) -> Optional[int]:
        return None if self.coefficients is None else self.coefficients.n

    @property
    def moment(self) -> int:
        """Order of the central moment this estimator targets."""
        return 3 if self.kind == "third_moment" else 2

    def __call__(self, x) -> EstimateReport:
        if self.kind == "naive":
            return naive_variance(x)
        if self.kind == "unbiased":
            return unbiased_variance(x)
        if self.kind == "aauv":
            return aauv(x, self.coefficients, self.tol)
        if self.kind == "interpolated":
            return interpolated_variance(x, self.coefficients, self.lam, self.tol)
        return third_moment_estimator(x, self.coefficients, self.tol)

    def rows(self, X) -> np.ndarray:
        X = _rows(X)
        if self.n is not None and X.shape[1] != self.n:
            raise ValueError(
                f"length mismatch: samples have N = {X.shape[1]}, coefficients have {self.n}"
            )
        if self.kind != "naive" and X.shape[1] < 2:
            raise ValueError("degenerate sample: need N >= 2")
        X = X - X[:, :1]
        if self.kind == "naive":
            return naive_variance_rows(X)
        if self.kind == "unbiased":
            return unbiased_variance_rows(X)
        if self.kind == "aauv":
            return aauv_rows(X, self.coefficients)
        if self.kind == "interpolated":
            return interpolated_variance_rows(X, self.coefficients, self.lam)
        return third_moment_rows(X, self.coefficients)
