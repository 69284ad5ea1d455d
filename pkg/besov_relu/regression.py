"""Nonparametric regression: data, estimators, risk measurement and rate calculators.

The adaptive estimator fits least squares over a B-spline dictionary chosen
by the N-term budget of ``besov_relu.approx`` and clips the result to
[-F, F]. Kernel ridge regression is the linear baseline.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg, sparse
from scipy.sparse.linalg import lsqr
from sklearn.model_selection import KFold

from besov_relu.approx import (
    BlackBox,
    adaptive_budget,
    quadrature_points,
    sparse_grid_budget,
    sparse_grid_index_set,
    sparse_grid_level,
)
from besov_relu.bspline import Expansion, design_matrix, level_indices
from besov_relu.exceptions import (
    DimensionMismatchError,
    ParameterError,
    SingularSystemError,
)
from besov_relu.models import DyadicIndex, Family, SpaceParams, parse_extended, positive_part

logger = logging.getLogger(__name__)

RIDGE_JITTER = 1e-10
PIVOT_TOLERANCE = 1e-12
MIN_SUPPORT_FACTOR = 2
MC_SAMPLES = 200_000


@dataclass(frozen=True)
class RegressionConfig:
    """Settings of the regression model y = f0(x) + sigma * xi.

    Inputs are uniform on [0, 1]^d and the noise is standard normal.

    Attributes:
        n: Sample count.
        sigma: Noise standard deviation.
        F: Clipping bound of the estimator.
        seed: Seed of the counter-based generator.
        d: Input dimension.
    """

    n: int
    sigma: float
    F: float = 1.0  # noqa: N815
    seed: int = 0
    d: int = 1

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"Sample count n must be a positive integer, got {self.n}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ParameterError(f"Noise level sigma must be >= 0, got {self.sigma}")
        if not self.F >= 1:
            raise ParameterError(f"Clipping bound F must be >= 1, got {self.F}")
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"Dimension d must be a positive integer, got {self.d}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Regression sample: inputs x of shape (n, d) and responses y of shape (n,)."""

    x: NDArray[np.float64]
    y: NDArray[np.float64]

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise DimensionMismatchError("responses", x.shape[0], y.shape[0])
        if x.shape[0] == 0:
            raise ParameterError("Dataset must hold at least one sample")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        """Return the sample count."""
        return int(self.y.shape[0])

    @property
    def d(self) -> int:
        """Return the input dimension."""
        return int(self.x.shape[1])

    def to_csv(self, path: str | Path) -> None:
        """Write columns x_1..x_d, y with round-trippable decimals."""
        header = ",".join([f"x_{i + 1}" for i in range(self.d)] + ["y"])
        np.savetxt(
            path,
            np.column_stack([self.x, self.y]),
            fmt="%.17g",
            delimiter=",",
            header=header,
            comments="",
        )

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        """Read a dataset written by ``to_csv``.

        Raises:
            ParameterError: If the header is not x_1..x_d, y.
        """
        with open(path, encoding="utf-8") as handle:
            columns = handle.readline().strip().split(",")
        d = len(columns) - 1
        if d < 1 or columns != [f"x_{i + 1}" for i in range(d)] + ["y"]:
            raise ParameterError(f"Unexpected dataset header {columns}")
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(table[:, :d], table[:, d])


@dataclass(frozen=True)
class EstimatorReport:
    """A fitted estimator with its training summary.

    Attributes:
        estimate: Callable on (n, d) arrays.
        dictionary_size: Number of basis functions (or kernel centres).
        residual: Training mean squared error of the unclipped fit.
        clipped: Whether the estimate is clipped to [-F, F].
        method: Estimator name.
        theory: Budget, jitter and tuning details.
        expansion: The unclipped B-spline fit, when there is one.
    """

    estimate: BlackBox
    dictionary_size: int
    residual: float
    clipped: bool
    method: str
    theory: dict[str, Any] = field(default_factory=dict)
    expansion: Expansion | None = None

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        """Evaluate the estimate on an (n, d) array."""
        return np.asarray(self.estimate(np.atleast_2d(np.asarray(x, dtype=np.float64))))

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON report."""
        data: dict[str, Any] = {
            "method": self.method,
            "dictionary_size": self.dictionary_size,
            "residual": self.residual,
            "clipped": self.clipped,
            "theory": self.theory,
        }
        if self.expansion is not None:
            data["expansion"] = self.expansion.to_dict()
        return data


class ClippedExpansion:
    """The map x -> min(max(e(x), -F), F)."""

    __slots__ = ("expansion", "bound")

    def __init__(self, expansion: Expansion, bound: float) -> None:
        """Initialize a ClippedExpansion."""
        self.expansion = expansion
        self.bound = float(bound)

    def __call__(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """Evaluate the clipped expansion."""
        return np.clip(np.asarray(self.expansion(x), dtype=np.float64), -self.bound, self.bound)


def generate_data(f0: BlackBox, cfg: RegressionConfig) -> Dataset:
    """Draw x uniform on [0, 1]^d and y = f0(x) + sigma * N(0, 1).

    Inputs and noise use separate Philox streams spawned from ``cfg.seed``.
    """
    x_stream, noise_stream = np.random.SeedSequence(cfg.seed).spawn(2)
    x = np.random.Generator(np.random.Philox(x_stream)).uniform(0.0, 1.0, size=(cfg.n, cfg.d))
    noise = np.random.Generator(np.random.Philox(noise_stream)).standard_normal(cfg.n)
    clean = np.asarray(f0(x), dtype=np.float64).reshape(-1)
    if clean.shape[0] != cfg.n:
        raise DimensionMismatchError("target values", cfg.n, clean.shape[0])
    return Dataset(x, clean + cfg.sigma * noise)


def _least_squares(
    design: sparse.csr_matrix, y: NDArray[np.float64], jitter: float
) -> tuple[NDArray[np.float64], float]:
    """Solve the normal equations by Cholesky, adding ridge jitter if the design is deficient.

    Multilevel dictionaries span nested spaces, so deficient designs are routine.
    """
    gram = (design.T @ design).toarray()
    rhs = np.asarray(design.T @ y, dtype=np.float64).reshape(-1)
    try:
        factor = linalg.cho_factor(gram)
        pivots = np.abs(np.diag(factor[0]))
        if pivots.min() ** 2 > PIVOT_TOLERANCE * pivots.max() ** 2:
            return linalg.cho_solve(factor, rhs), 0.0
    except linalg.LinAlgError:
        pass
    scale = max(float(np.trace(gram)) / max(gram.shape[0], 1), 1.0)
    ridge = jitter * scale
    logger.debug(
        "Rank-deficient design (%d columns), adding ridge jitter %.3g", gram.shape[0], ridge
    )
    try:
        factor = linalg.cho_factor(gram + ridge * np.eye(gram.shape[0]))
    except linalg.LinAlgError as e:
        raise SingularSystemError("Normal equations stay singular after jitter") from e
    return linalg.cho_solve(factor, rhs), ridge


def fit_dictionary(
    data: Dataset,
    indices: Sequence[DyadicIndex],
    m: int,
    F: float,  # noqa: N803
    jitter: float = RIDGE_JITTER,
) -> EstimatorReport:
    """Least squares over a fixed B-spline dictionary, clipped to [-F, F].

    Raises:
        ParameterError: If the dictionary is empty.
        SingularSystemError: If the normal equations cannot be solved.
    """
    if not indices:
        raise ParameterError("Dictionary must hold at least one basis function")
    design = design_matrix(indices, m, data.x)
    coefficients, ridge = _least_squares(design, data.y, jitter)
    residual = float(np.mean((design @ coefficients - data.y) ** 2))
    expansion = Expansion(m, data.d, zip(indices, coefficients))
    return EstimatorReport(
        estimate=ClippedExpansion(expansion, F),
        dictionary_size=len(indices),
        residual=residual,
        clipped=True,
        method="dictionary",
        theory={"jitter": ridge},
        expansion=expansion,
    )


def _pilot_select(
    data: Dataset, residual: NDArray[np.float64], block: list[DyadicIndex], count: int, m: int
) -> list[DyadicIndex]:
    """Keep the ``count`` atoms of one block that explain most of the residual.

    Atoms whose support holds fewer than ``MIN_SUPPORT_FACTOR * (m+1)``
    samples are dropped first. The rest are ranked by |pilot coefficient|
    times the empirical column norm, ties broken by index order.
    """
    design = design_matrix(block, m, data.x).tocsc()
    support = np.diff(design.indptr)
    keep = np.flatnonzero(support >= MIN_SUPPORT_FACTOR * (m + 1))
    if keep.size <= count:
        return [block[j] for j in keep]
    design = design[:, keep]
    pilot = lsqr(design, residual, atol=1e-12, btol=1e-12)[0]
    norms = np.sqrt(np.asarray(design.multiply(design).sum(axis=0)).ravel())
    order = np.lexsort((keep, -np.abs(pilot) * norms))
    return [block[j] for j in keep[order[:count]]]


def select_dictionary(
    data: Dataset, params: SpaceParams, N: int  # noqa: N803
) -> tuple[list[DyadicIndex], dict[str, Any]]:
    """Choose at most N basis functions: full low levels plus pilot-selected tail terms.

    Returns:
        The dictionary in canonical order and the budget sidecar.
    """
    m, d = params.m, params.d
    if params.mixed:
        K = sparse_grid_level(params, N)  # noqa: N806
        budget = sparse_grid_budget(params, K)
        base = [
            i for k in sparse_grid_index_set(K, d) for i in level_indices(k, m, active=True)
        ]
        tail = [
            (k, budget.n_k[sum(k)])
            for k in sparse_grid_index_set(budget.K_star, d)
            if sum(k) > K
        ]
    else:
        budget = adaptive_budget(params, N)
        base = [i for k in range(budget.K + 1) for i in level_indices((k,) * d, m, active=True)]
        tail = [((k,) * d, count) for k, count in sorted(budget.n_k.items())]

    chosen = list(base)
    if tail:
        design = design_matrix(base, m, data.x)
        coefficients, _ = _least_squares(design, data.y, RIDGE_JITTER)
        residual = data.y - design @ coefficients
        for levels, count in tail:
            block = level_indices(levels, m, active=True)
            chosen.extend(_pilot_select(data, residual, block, count, m))
    logger.debug("Selected %d of N=%d basis functions (K=%d)", len(chosen), N, budget.K)
    return sorted(chosen), budget.to_dict()


def fit_adaptive_dictionary(
    data: Dataset, params: SpaceParams, N: int, F: float  # noqa: N803
) -> EstimatorReport:
    """Fit the clipped adaptive dictionary estimator with at most N terms.

    Levels follow the N-term budget; within a tail level the terms with the
    largest pilot coefficients are kept. The final fit is plain least squares.

    Raises:
        ParameterError: If N < 1 or the data dimension disagrees with params.
        BudgetError: If N cannot hold the coarsest level.
    """
    if N < 1:
        raise ParameterError(f"Dictionary budget N must be >= 1, got {N}")
    if data.d != params.d:
        raise DimensionMismatchError("data", params.d, data.d)
    indices, budget = select_dictionary(data, params, N)
    report = fit_dictionary(data, indices, params.m, F)
    logger.info(
        "Adaptive dictionary n=%d N=%d: size=%d residual=%.3g",
        data.n,
        N,
        report.dictionary_size,
        report.residual,
    )
    return EstimatorReport(
        estimate=report.estimate,
        dictionary_size=report.dictionary_size,
        residual=report.residual,
        clipped=True,
        method="adaptive",
        theory={**report.theory, "budget": budget},
        expansion=report.expansion,
    )


def gaussian_kernel(
    a: NDArray[np.float64], b: NDArray[np.float64], bandwidth: float | None = None
) -> NDArray[np.float64]:
    """Return exp(-|a_i - b_j|^2 / (2 h^2)); h defaults to 0.1."""
    h = 0.1 if bandwidth is None else bandwidth
    sq = np.sum(a**2, axis=1)[:, None] + np.sum(b**2, axis=1)[None, :] - 2.0 * a @ b.T
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * h * h))


def spline_kernel(
    a: NDArray[np.float64], b: NDArray[np.float64], bandwidth: float | None = None
) -> NDArray[np.float64]:
    """Return the tensor cubic spline kernel prod_i [1 + a b + min^2 (3 max - min)/6]."""
    gram = np.ones((a.shape[0], b.shape[0]))
    for axis in range(a.shape[1]):
        u, v = a[:, axis][:, None], b[:, axis][None, :]
        low, high = np.minimum(u, v), np.maximum(u, v)
        gram *= 1.0 + u * v + low**2 * (3.0 * high - low) / 6.0
    return gram


KERNELS: dict[str, Callable[..., NDArray[np.float64]]] = {
    "gaussian": gaussian_kernel,
    "spline": spline_kernel,
}


def _kernel(name: str) -> Callable[..., NDArray[np.float64]]:
    if name not in KERNELS:
        raise ParameterError(f"Unknown kernel '{name}'. Expected one of {list(KERNELS)}")
    return KERNELS[name]


class KernelEstimate:
    """The map x -> k(x, X) alpha."""

    __slots__ = ("centres", "weights", "kernel", "bandwidth")

    def __init__(
        self,
        centres: NDArray[np.float64],
        weights: NDArray[np.float64],
        kernel: str,
        bandwidth: float | None,
    ) -> None:
        """Initialize a KernelEstimate."""
        self.centres = centres
        self.weights = weights
        self.kernel = kernel
        self.bandwidth = bandwidth

    def __call__(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """Evaluate the kernel expansion."""
        return _kernel(self.kernel)(np.atleast_2d(x), self.centres, self.bandwidth) @ self.weights


def fit_krr(
    data: Dataset, kernel: str = "gaussian", lam: float = 1e-3, bandwidth: float | None = None
) -> EstimatorReport:
    """Fit kernel ridge regression f(x) = k(x, X)(K + lam I)^{-1} Y.

    Raises:
        ParameterError: If lam < 0 or the kernel is unknown.
        SingularSystemError: If lam = 0 with repeated inputs, or the Gram
            matrix cannot be factored.

    Example:
        >>> data = Dataset(np.array([[0.3]]), np.array([2.0]))
        >>> round(float(fit_krr(data, "spline", 0.0)(np.array([[0.3]]))[0]), 12)
        2.0
    """
    if not (math.isfinite(lam) and lam >= 0):
        raise ParameterError(f"Ridge parameter must be >= 0, got {lam}")
    if lam == 0 and np.unique(data.x, axis=0).shape[0] < data.n:
        raise SingularSystemError("Interpolation (lam=0) needs distinct inputs")
    gram = _kernel(kernel)(data.x, data.x, bandwidth)
    try:
        factor = linalg.cho_factor(gram + lam * np.eye(data.n))
    except linalg.LinAlgError as e:
        raise SingularSystemError(f"{kernel} Gram matrix is singular at lam={lam}") from e
    weights = linalg.cho_solve(factor, data.y)
    residual = float(np.mean((gram @ weights - data.y) ** 2))
    return EstimatorReport(
        estimate=KernelEstimate(data.x, weights, kernel, bandwidth),
        dictionary_size=data.n,
        residual=residual,
        clipped=False,
        method=f"krr_{kernel}",
        theory={"lambda": lam, "bandwidth": bandwidth},
    )


def _cv_errors(
    data: Dataset,
    kernel: str,
    lambdas: NDArray[np.float64],
    bandwidth: float | None,
    folds: KFold,
) -> NDArray[np.float64]:
    """Mean validation MSE per lambda, one eigendecomposition per fold."""
    errors = np.zeros(len(lambdas))
    for train, test in folds.split(data.x):
        gram = _kernel(kernel)(data.x[train], data.x[train], bandwidth)
        cross = _kernel(kernel)(data.x[test], data.x[train], bandwidth)
        values, vectors = linalg.eigh(gram)
        projected = vectors.T @ data.y[train]
        for pos, lam in enumerate(lambdas):
            shrink = np.maximum(values, 0.0) + lam
            weights = vectors @ np.divide(
                projected, shrink, out=np.zeros_like(projected), where=shrink > 0
            )
            errors[pos] += np.mean((cross @ weights - data.y[test]) ** 2)
    return errors / folds.get_n_splits()


def fit_krr_cv(
    data: Dataset,
    kernel: str = "gaussian",
    lambdas: Sequence[float] | None = None,
    bandwidths: Sequence[float] | None = None,
    n_folds: int = 5,
    seed: int = 0,
) -> EstimatorReport:
    """Fit kernel ridge regression with lambda (and bandwidth) chosen by K-fold CV.

    Default lambdas are n * 10^{-9..-1}; default Gaussian bandwidths are
    0.02, 0.05, 0.1 and 0.2. Ties go to the first candidate.
    """
    if lambdas is None:
        lambdas = [data.n * 10.0**e for e in range(-9, 0)]
    if kernel == "gaussian":
        candidates: Sequence[float | None] = bandwidths or (0.02, 0.05, 0.1, 0.2)
    else:
        candidates = (None,)
    grid = np.asarray(lambdas, dtype=np.float64)
    if data.n < 2:
        logger.warning("Too few samples for cross-validation, using lambda=%g", grid[-1])
        return fit_krr(data, kernel, float(grid[-1]), candidates[0])
    folds = KFold(n_splits=min(n_folds, data.n), shuffle=True, random_state=seed)
    best: tuple[float, float, float | None] = (math.inf, float(grid[-1]), candidates[0])
    for bandwidth in candidates:
        errors = _cv_errors(data, kernel, grid, bandwidth, folds)
        pos = int(np.argmin(errors))
        if errors[pos] < best[0]:
            best = (float(errors[pos]), float(grid[pos]), bandwidth)
    cv_mse, lam, bandwidth = best
    logger.info("CV %s kernel: lambda=%.3g bandwidth=%s mse=%.3g", kernel, lam, bandwidth, cv_mse)
    report = fit_krr(data, kernel, lam, bandwidth)
    return EstimatorReport(
        estimate=report.estimate,
        dictionary_size=report.dictionary_size,
        residual=report.residual,
        clipped=False,
        method=f"krr_{kernel}_cv",
        theory={**report.theory, "cv_mse": cv_mse, "folds": folds.get_n_splits()},
    )


@dataclass(frozen=True)
class RiskEstimate:
    """Estimated L^2(P_X) risk with its standard error (0 for quadrature)."""

    value: float
    stderr: float
    method: str

    def __float__(self) -> float:
        return self.value


def empirical_l2_risk(
    fhat: BlackBox,
    f0: BlackBox,
    d: int,
    method: str | None = None,
    samples: int = MC_SAMPLES,
    seed: int = 0,
) -> RiskEstimate:
    """Return the integral of (fhat - f0)^2 over the uniform law on [0, 1]^d.

    The midpoint rule is used for d <= 2 and Monte Carlo otherwise, unless
    ``method`` forces "midpoint" or "monte_carlo".
    """
    rule = method or ("midpoint" if d <= 2 else "monte_carlo")
    if rule == "midpoint":
        if d > 2:
            raise ParameterError("The midpoint rule is available for d <= 2 only")
        points, _ = quadrature_points(d)
    elif rule == "monte_carlo":
        rng = np.random.Generator(np.random.Philox(seed))
        points = rng.uniform(0.0, 1.0, size=(samples, d))
    else:
        raise ParameterError(f"Unknown risk rule '{rule}'")
    squared = (np.asarray(fhat(points)) - np.asarray(f0(points))).reshape(-1) ** 2
    value = float(np.mean(squared))
    stderr = 0.0 if rule == "midpoint" else float(np.std(squared, ddof=1) / math.sqrt(len(squared)))
    return RiskEstimate(value, stderr, rule)


def _check_network_class(L: int, W: int, S: int, B: float, delta: float) -> None:  # noqa: N803
    if min(L, W, S) < 1 or not B > 0:
        raise ParameterError(f"Network class needs positive L, W, S, B, got {(L, W, S, B)}")
    if not 0 < delta <= 1:
        raise ParameterError(f"delta must lie in (0, 1], got {delta}")


def covering_number_bound(L: int, W: int, S: int, B: float, delta: float) -> float:  # noqa: N803
    """Return 2SL ln(delta^{-1} L (B v 1)(W + 1)), a bound on the sup-norm log covering number.

    Example:
        >>> round(covering_number_bound(2, 3, 10, 1.0, 0.1), 2)
        175.28
    """
    _check_network_class(L, W, S, B, delta)
    return 2.0 * S * L * math.log(L * max(B, 1.0) * (W + 1) / delta)


def covering_number_bound_tight(
    L: int, W: int, S: int, B: float, delta: float  # noqa: N803
) -> float:
    """Return S ln(delta^{-1} L (B v 1)^{L-1} (W + 1)^{2L}), the sharper form."""
    _check_network_class(L, W, S, B, delta)
    return S * (
        math.log(L / delta) + (L - 1) * math.log(max(B, 1.0)) + 2 * L * math.log(W + 1)
    )


def risk_bound_terms(
    approx_err: float, cover_log: float, n: int, F: float, eps: float, delta: float  # noqa: N803
) -> dict[str, float]:
    """Return the terms of (1 + eps)^2 [approx + F^2(cover_log - ln delta)/(n eps) + delta F^2].

    The universal constant is taken as 1.
    """
    if min(approx_err, cover_log, F) < 0 or n < 1:
        raise ParameterError("Risk bound inputs must be nonnegative and n >= 1")
    if not (0 < eps <= 1 and 0 < delta <= 1):
        raise ParameterError(f"Need eps and delta in (0, 1], got eps={eps}, delta={delta}")
    covering = F * F * (cover_log - math.log(delta)) / (n * eps)
    discretization = delta * F * F
    bracket = approx_err + covering + discretization
    prefactor = (1.0 + eps) ** 2
    return {
        "approximation": approx_err,
        "covering": covering,
        "discretization": discretization,
        "bracket": bracket,
        "prefactor": prefactor,
        "total": prefactor * bracket,
    }


def risk_bound(
    approx_err: float, cover_log: float, n: int, F: float, eps: float, delta: float  # noqa: N803
) -> float:
    """Return the order-level bracket approx + F^2(cover_log - ln delta)/(n eps) + delta F^2."""
    return risk_bound_terms(approx_err, cover_log, n, F, eps, delta)["bracket"]


@dataclass(frozen=True)
class RateParams:
    """Inputs of a closed-form rate family; u and v are derived from (p, q).

    Attributes:
        family: Which rate to evaluate.
        s: Smoothness.
        p: Integrability exponent.
        q: Fine index.
        d: Dimension.
        r: Error norm exponent (approximation families only).
    """

    family: Family
    s: float
    p: float
    q: float
    d: int = 1
    r: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        for name in ("p", "q", "r"):
            object.__setattr__(self, name, parse_extended(getattr(self, name)))
        if not (math.isfinite(self.s) and self.s > 0):
            raise ParameterError(f"Smoothness s must be positive, got {self.s}")
        if self.p <= 0 or self.q <= 0 or self.r <= 0:
            raise ParameterError("Exponents p, q and r must be positive")
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"Dimension d must be a positive integer, got {self.d}")

    @property
    def u(self) -> float:
        """Return (1 - 1/q)_+ for p >= 2 and (1/2 - 1/q)_+ for p < 2."""
        return positive_part((1.0 if self.p >= 2 else 0.5) - 1.0 / self.q)

    @property
    def v(self) -> float:
        """Return 2/(p min 2) - 1."""
        return 2.0 / min(self.p, 2.0) - 1.0


def rate_reference(params: RateParams, n: int) -> tuple[float, float]:
    """Evaluate a reference rate at sample size (or term budget) n.

    Returns:
        The value and the exponent of n. Polylog factors enter the value only.

    Raises:
        ParameterError: If the family does not apply to the parameters.

    Example:
        >>> value, exponent = rate_reference(RateParams("besov", s=1.0, p=1.0, q=1.0), 4096)
        >>> round(value, 12), round(exponent, 6)
        (0.00390625, -0.666667)
    """
    if n < 2:
        raise ParameterError(f"Rate references need n >= 2, got {n}")
    s, d, log_n = params.s, params.d, math.log(n)
    log_factor = 1.0
    log2e = math.log2(math.e)
    family = params.family
    if family is Family.BESOV:
        exponent = -2 * s / (2 * s + d)
    elif family is Family.MIXED:
        exponent = -2 * s / (2 * s + 1)
        log_factor = log_n ** (2 * (d - 1) * (params.u + s) / (1 + 2 * s))
    elif family is Family.MIXED_SECOND:
        u = params.u
        if s <= u * log2e:
            raise ParameterError(f"The second mixed bound needs s > u log2(e) = {u * log2e}")
        exponent = -(2 * s - 2 * u * log2e) / (2 * s + 1 + (1 - 2 * u) * log2e)
    elif family is Family.LINEAR_LOWER:
        if d != 1:
            raise ParameterError("The linear lower rate is stated for d = 1")
        v = params.v
        if 2 * s <= v:
            raise ParameterError(f"The linear lower rate needs 2s > v = {v}")
        exponent = -(2 * s - v) / (2 * s + 1 - v)
    elif family is Family.MIXED_LOWER:
        exponent = -2 * s / (2 * s + 1)
        gap = positive_part(s + 0.5 - 1.0 / params.q)
        log_factor = log_n ** (2 * (d - 1) * gap / (2 * s + 1))
    elif family is Family.APPROX_ADAPTIVE:
        exponent = -s / d
    else:
        exponent = -s / d + positive_part(1.0 / params.p - 1.0 / params.r)
    return float(n) ** exponent * log_factor, exponent
