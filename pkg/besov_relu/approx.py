"""Besov function synthesis, quasi-interpolation and adaptive N-term approximation."""

import itertools
import logging
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from besov_relu.bspline import (
    Expansion,
    eval_cardinal,
    level_indices,
    refine_expansion,
    sequence_norm,
)
from besov_relu.exceptions import BudgetError, ParameterError, SingularSystemError
from besov_relu.models import DyadicIndex, Mode, SpaceParams

logger = logging.getLogger(__name__)

BlackBox = Callable[[NDArray[np.float64]], NDArray[np.float64]]

FULL_LEVEL_SHARE = 0.5


@dataclass(frozen=True)
class AdaptiveBudget:
    """Term budget of an adaptive N-term approximant.

    Attributes:
        N: Total term budget.
        K: Levels up to K are kept in full.
        K_star: No term above this level is kept.
        nu: Tail decay rate, None when delta = 0.
        delta: d(1/p - 1/r)_+ or (1/p - 1/r)_+.
        C1: Effective constant with K = C1 ln(N)/d.
        lambda_budget: lambda with lambda N = t the leading tail count.
        n_k: Terms kept per tail level (total level in the mixed case).
        full_count: Number of coefficients on the fully kept levels.
        mode: Isotropic levels or mixed level vectors.
    """

    N: int
    K: int
    K_star: int
    nu: float | None
    delta: float
    C1: float
    lambda_budget: float
    n_k: dict[int, int] = field(default_factory=dict)
    full_count: int = 0
    mode: Mode = Mode.ISOTROPIC

    @property
    def tail_count(self) -> int:
        """Return the isotropic tail size sum_k n_k."""
        return sum(self.n_k.values())

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON sidecar {N, K, K_star, C1, lambda, n_k, ...}."""
        return {
            "N": self.N,
            "K": self.K,
            "K_star": self.K_star,
            "C1": self.C1,
            "lambda": self.lambda_budget,
            "nu": self.nu,
            "delta": self.delta,
            "full_count": self.full_count,
            "mode": self.mode.value,
            "n_k": {str(k): v for k, v in sorted(self.n_k.items())},
        }


def level_size(levels: Iterable[int], m: int) -> int:
    """Return prod_i (2^{k_i} + m), the active coefficients of a level vector."""
    return math.prod(2**k + m for k in levels)


def full_count(K: int, d: int, m: int) -> int:  # noqa: N803
    """Return sum_{k <= K} (2^k + m)^d, the active isotropic coefficients on levels 0..K."""
    return sum((2**k + m) ** d for k in range(K + 1))


def dkd(K: int, d: int) -> float:  # noqa: N803
    """Return D_{K,d} = (1 + (d-1)/K)^K (1 + K/(d-1))^{d-1}.

    d = 1 and K = 0 return 1, the limit of both factors.

    Example:
        >>> dkd(1, 2)
        4.0
    """
    if K < 0 or d < 1:
        raise ParameterError(f"dkd needs K >= 0 and d >= 1, got K={K}, d={d}")
    if d == 1 or K == 0:
        return 1.0
    return float((1 + (d - 1) / K) ** K * (1 + K / (d - 1)) ** (d - 1))


def tail_level(params: SpaceParams, K: int) -> int:  # noqa: N803
    """Return K* = ceil(K(1 + 2 delta/(s - delta))) for sparse grids.

    Example:
        >>> tail_level(SpaceParams(s=1.0, p=1.0, q=1.0, r=2.0, d=2, m=2, mixed=True), 4)
        12
    """
    return math.ceil(K * (1 + params.nu_inverse) - 1e-9)


def mixed_term_count(params: SpaceParams, K: int) -> float:  # noqa: N803
    """Return N(K) = (2 + (1 - 2^{-nu})^{-1}) 2^K D_{K*,d}; the factor is 3 when delta = 0."""
    nu = params.nu
    factor = 3.0 if nu is None else 2.0 + 1.0 / (1.0 - 2.0**-nu)
    return factor * 2.0**K * dkd(tail_level(params, K), params.d)


def sparse_grid_index_set(K: int, d: int) -> list[tuple[int, ...]]:  # noqa: N803
    """Return {k in N^d : ||k||_1 <= K}, by total level then descending lexicographic.

    Example:
        >>> sparse_grid_index_set(2, 2)
        [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    """
    if K < 0 or d < 1:
        raise ParameterError(f"Sparse grid needs K >= 0 and d >= 1, got K={K}, d={d}")
    levels = [k for k in itertools.product(range(K + 1), repeat=d) if sum(k) <= K]
    return sorted(levels, key=lambda k: (sum(k), tuple(-v for v in k)))


def _level_indices_for(params: SpaceParams, max_level: int) -> list[tuple[int, ...]]:
    if params.mixed:
        return sparse_grid_index_set(max_level, params.d)
    return [(k,) * params.d for k in range(max_level + 1)]


def _sample_shells(params: SpaceParams, max_level: int) -> list[list[tuple[int, ...]]]:
    """Return the level vectors drawn jointly, one shell per total level."""
    if params.mixed:
        shells: dict[int, list[tuple[int, ...]]] = {}
        for levels in sparse_grid_index_set(max_level, params.d):
            shells.setdefault(sum(levels), []).append(levels)
        return [shells[total] for total in sorted(shells)]
    return [[(k,) * params.d] for k in range(max_level + 1)]


def tail_index(p: float) -> float:
    """Return the Pareto index (p + 2)/2 used for magnitudes when p < 2.

    It lies strictly between p and 2, so block l_p norms stay stable while
    the l_2 mass sits on a few large coefficients.
    """
    return (p + 2.0) / 2.0


def sample_besov_function(
    params: SpaceParams,
    radius: float,
    max_level: int,
    rng_seed: int,
    spikes: int = 0,
    spike_share: float = 0.0,
) -> Expansion:
    """Draw a random expansion whose sequence norm equals ``radius``.

    Every shell is drawn independently, normalized to unit l_p norm and scaled
    so its weighted norm is 1; the whole expansion is then rescaled to
    ``radius``. Isotropic shells are the levels 0..max_level; mixed shells
    hold all level vectors of one total level ||k||_1 <= max_level. For p < 2
    magnitudes follow a Pareto law of index ``tail_index(p)``, otherwise they
    are Gaussian. Only shifts whose basis function meets [0, 1)^d are drawn.

    Args:
        params: Smoothness parameters of the ball.
        radius: Sequence norm of the result.
        max_level: Highest level (total level in mixed mode).
        rng_seed: Seed of the per-shell Philox streams.
        spikes: Coefficients per shell that receive an extra spike.
        spike_share: Share of every shell's l_p mass carried by the spikes.

    Raises:
        ParameterError: If max_level < 0, radius <= 0 or the spike settings
            are out of range.
    """
    if max_level < 0:
        raise ParameterError(f"max_level must be >= 0 to hold any coefficient, got {max_level}")
    if not (math.isfinite(radius) and radius > 0):
        raise ParameterError(f"radius must be positive, got {radius}")
    if spikes < 0 or not 0.0 <= spike_share < 1.0 or (spike_share > 0) != (spikes > 0):
        raise ParameterError(f"Bad spikes={spikes} with spike_share={spike_share}")
    shells = _sample_shells(params, max_level)
    streams = np.random.SeedSequence(rng_seed).spawn(len(shells))
    weight_exponent = params.level_weight_exponent
    terms: dict[DyadicIndex, float] = {}
    for shell, stream in zip(shells, streams):
        rng = np.random.Generator(np.random.Philox(stream))
        indices = [i for levels in shell for i in level_indices(levels, params.m, active=True)]
        if params.p < 2:
            magnitudes = 1.0 + rng.pareto(tail_index(params.p), size=len(indices))
            values = magnitudes * rng.choice([-1.0, 1.0], size=len(indices))
        else:
            values = rng.standard_normal(len(indices))
        values = (1.0 - spike_share) * values / _lp(np.abs(values), params.p)
        if spikes:
            count = min(spikes, len(indices))
            chosen = rng.choice(len(indices), size=count, replace=False)
            height = spike_share / _lp(np.ones(count), params.p)
            values[chosen] += height * rng.choice([-1.0, 1.0], size=count)
        total_level = sum(shell[0]) / (1 if params.mixed else params.d)
        scale = 2.0 ** (-total_level * weight_exponent)
        for index, value in zip(indices, values * scale):
            terms[index] = float(value)
    sample = Expansion(params.m, params.d, terms)
    total = sequence_norm(sample, params)
    logger.debug("Sampled %d terms on %d shells (seed=%d)", len(sample), len(shells), rng_seed)
    return sample.scaled(radius / total)


def _lp(magnitudes: NDArray[np.float64], p: float) -> float:
    if math.isinf(p):
        return float(np.max(magnitudes))
    return float(np.sum(magnitudes**p) ** (1.0 / p))


def _axis_samples(level: int, per_interval: int) -> NDArray[np.float64]:
    """Return ``per_interval`` midpoints in every knot interval of [0, 1] at ``level``."""
    offsets = (np.arange(per_interval) + 0.5) / per_interval
    return ((np.arange(2**level)[:, None] + offsets[None, :]) / 2**level).reshape(-1)


def _axis_operator(level: int, m: int, per_interval: int) -> tuple[NDArray[np.float64], range]:
    """Return the least-squares operator of one axis and its shift range."""
    samples = _axis_samples(level, per_interval)
    shifts = range(-m, 2**level)
    basis = eval_cardinal(m, samples[:, None] * 2**level - np.array(shifts)[None, :])
    try:
        factor = cho_factor(basis.T @ basis)
    except LinAlgError as e:
        raise SingularSystemError(f"Quasi-interpolant normal equations at level {level}") from e
    return cho_solve(factor, basis.T), shifts


def quasi_interpolate(f: BlackBox, level: int | tuple[int, ...], params: SpaceParams) -> Expansion:
    """Project ``f`` onto the level-k spline space by discrete least squares.

    ``f`` is sampled on a tensor grid with max(4, m+1) midpoints per knot
    interval and the normal equations are solved axis by axis. The shift
    j = 2^k is left out since it vanishes on [0, 1]. Splines of the level are
    reproduced to solver precision.

    Raises:
        SingularSystemError: If the normal equations cannot be factored.
    """
    levels = (level,) * params.d if isinstance(level, int) else tuple(level)
    if len(levels) != params.d:
        raise ParameterError(f"Level vector {levels} does not match d={params.d}")
    per_interval = max(4, params.m + 1)
    operators = [_axis_operator(k, params.m, per_interval) for k in levels]

    axes = [_axis_samples(k, per_interval) for k in levels]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, params.d)
    values = np.asarray(f(grid), dtype=np.float64).reshape([len(a) for a in axes])

    coefficients = values
    for axis, (operator, _) in enumerate(operators):
        projected = np.tensordot(operator, coefficients, axes=([1], [axis]))
        coefficients = np.moveaxis(projected, 0, axis)
    terms = {
        DyadicIndex(levels, shifts): float(coefficients[tuple(j + params.m for j in shifts)])
        for shifts in itertools.product(*(shifts for _, shifts in operators))
    }
    return Expansion(params.m, params.d, terms)


def decompose_function(f: BlackBox, params: SpaceParams, max_level: int) -> Expansion:
    """Return the multilevel expansion sum_k p_k with p_k = P_k f - refine(P_{k-1} f).

    Mixed mode uses the tensor differences over level vectors with
    ||k||_1 <= max_level.
    """
    if max_level < 0:
        raise ParameterError(f"max_level must be >= 0, got {max_level}")
    cache: dict[tuple[int, ...], Expansion] = {}

    def project(levels: tuple[int, ...]) -> Expansion:
        if levels not in cache:
            cache[levels] = quasi_interpolate(f, levels, params)
        return cache[levels]

    total = Expansion(params.m, params.d)
    for levels in _level_indices_for(params, max_level):
        if params.mixed:
            detail = Expansion(params.m, params.d)
            for drop in itertools.product((0, 1), repeat=params.d):
                coarse = tuple(k - e for k, e in zip(levels, drop))
                if min(coarse) < 0:
                    continue
                axes = [i for i, e in enumerate(drop) if e]
                piece = refine_expansion(project(coarse), axes) if axes else project(coarse)
                detail = detail + piece.scaled((-1) ** len(axes))
        elif levels[0] == 0:
            detail = project(levels)
        else:
            coarse = tuple(k - 1 for k in levels)
            detail = project(levels) + refine_expansion(project(coarse)).scaled(-1.0)
        total = total + detail
    return total


def adaptive_budget(
    params: SpaceParams, N: int, K: int | None = None  # noqa: N803
) -> AdaptiveBudget:
    """Return the isotropic N-term budget: full levels up to K plus a decaying tail.

    K defaults to the largest level whose full blocks fit into half of N.
    The tail keeps n_k = ceil(t 2^{-nu(k-K)}) terms on K < k <= K* with
    K* = ceil(ln(t)/nu) + K + 1, and t = lambda N is the largest integer that
    keeps the total within N. The tail is empty when delta = 0.

    Raises:
        BudgetError: If not even level 0 fits into the budget.
    """
    d, m = params.d, params.m
    if K is None:
        if full_count(0, d, m) > FULL_LEVEL_SHARE * N:
            raise BudgetError(f"N={N} cannot hold level 0 ({full_count(0, d, m)} terms)")
        K = 0
        while full_count(K + 1, d, m) <= FULL_LEVEL_SHARE * N:
            K += 1
    full = full_count(K, d, m)
    if full > N:
        raise BudgetError(f"Levels up to K={K} need {full} terms, budget is N={N}")
    c1 = K * d / math.log(N) if N > 1 else 0.0
    nu = params.nu
    if nu is None:
        return AdaptiveBudget(N, K, K, None, params.delta, c1, 0.0, {}, full)

    def tail(t: int) -> dict[int, int]:
        top = math.ceil(math.log(t) / nu) + K + 1
        return {
            k: min(math.ceil(t * 2.0 ** (-nu * (k - K))), (2**k + m) ** d)
            for k in range(K + 1, top + 1)
        }

    if full + sum(tail(1).values()) > N:
        return AdaptiveBudget(N, K, K, nu, params.delta, c1, 0.0, {}, full)
    lo, hi = 1, max(1, N)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if full + sum(tail(mid).values()) <= N:
            lo = mid
        else:
            hi = mid - 1
    n_k = tail(lo)
    budget = AdaptiveBudget(N, K, max(n_k), nu, params.delta, c1, lo / N, n_k, full)
    logger.debug("Adaptive budget: %s", budget.to_dict())
    return budget


Terms = list[tuple[DyadicIndex, float]]


def top_terms(block: Terms, count: int) -> Terms:
    """Return the ``count`` largest-magnitude terms, ties broken by index."""
    return sorted(block, key=lambda item: (-abs(item[1]), item[0]))[:count]


@dataclass(frozen=True)
class NTermApproximation:
    """An adaptive approximant together with the budget that selected it.

    Attributes:
        expansion: The kept terms.
        budget: Budget the terms were selected under.
        populated_level: Highest level (total level in mixed mode) of the input.
        truncated: True when the input stops below K*, so the tail was cut
            at ``populated_level``.
    """

    expansion: Expansion
    budget: AdaptiveBudget
    populated_level: int
    truncated: bool

    @property
    def effective_k_star(self) -> int:
        """Return the highest level that can hold a kept term."""
        return min(self.budget.K_star, self.populated_level)

    def to_dict(self) -> dict[str, Any]:
        """Return the budget sidecar extended by the selection outcome."""
        return {
            **self.budget.to_dict(),
            "terms": len(self.expansion),
            "populated_level": self.populated_level,
            "effective_K_star": self.effective_k_star,
            "truncated": self.truncated,
        }


def _populated_level(e: Expansion, mode: Mode) -> int:
    if mode is Mode.MIXED:
        return max((sum(i.levels) for i in e), default=-1)
    return e.max_level()


def _check_populated(e: Expansion, budget: AdaptiveBudget) -> tuple[int, bool]:
    populated = _populated_level(e, budget.mode)
    truncated = populated < budget.K_star
    if truncated:
        logger.warning(
            "Input populated up to level %d only, below K*=%d; tail is truncated",
            populated,
            budget.K_star,
        )
    return populated, truncated


def select_nterm(e: Expansion, budget: AdaptiveBudget, params: SpaceParams) -> NTermApproximation:
    """Keep all terms up to level K and the n_k largest on K < k <= K*.

    Raises:
        BudgetError: If the budget violates its own constraint or the output
            exceeds N terms.
    """
    if budget.full_count + budget.tail_count > budget.N:
        raise BudgetError(
            f"Budget needs {budget.full_count + budget.tail_count} terms, more than N={budget.N}"
        )
    populated, truncated = _check_populated(e, budget)
    kept: list[tuple[DyadicIndex, float]] = []
    for level, block in e.group_by_level(Mode.ISOTROPIC).items():
        if level <= budget.K:
            kept.extend(block)
        elif level <= budget.K_star:
            kept.extend(top_terms(block, budget.n_k.get(level, 0)))
    if len(kept) > budget.N:
        raise BudgetError(f"Selected {len(kept)} terms, budget is N={budget.N}")
    return NTermApproximation(Expansion(e.order, e.dim, kept), budget, populated, truncated)


def adaptive_nterm_besov(e: Expansion, budget: AdaptiveBudget, params: SpaceParams) -> Expansion:
    """Return the expansion of ``select_nterm``."""
    return select_nterm(e, budget, params).expansion


def sparse_grid_term_budget(params: SpaceParams, K: int, total_level: int) -> int:  # noqa: N803
    """Return n_k = ceil(2^{K - nu(||k||_1 - K)}) for a band level vector.

    Example:
        >>> params = SpaceParams(s=1.0, p=1.0, q=1.0, r=2.0, d=2, m=2, mixed=True)
        >>> sparse_grid_term_budget(params, 4, 6)
        8
    """
    nu = params.nu
    if nu is None:
        return 0
    return math.ceil(2.0 ** (K - nu * (total_level - K)))


def sparse_grid_budget(params: SpaceParams, K: int) -> AdaptiveBudget:  # noqa: N803
    """Return the mixed budget: full blocks for ||k||_1 <= K, n_k per band block."""
    if K < 0:
        raise ParameterError(f"K must be >= 0, got {K}")
    d, m = params.d, params.m
    k_star = tail_level(params, K) if params.nu is not None else K
    full = sum(level_size(k, m) for k in sparse_grid_index_set(K, d))
    n_k = {
        level: sparse_grid_term_budget(params, K, level) for level in range(K + 1, k_star + 1)
    }
    band = sum(
        min(n_k[sum(k)], level_size(k, m))
        for k in sparse_grid_index_set(k_star, d)
        if sum(k) > K
    )
    return AdaptiveBudget(
        N=full + band,
        K=K,
        K_star=k_star,
        nu=params.nu,
        delta=params.delta,
        C1=float("nan"),
        lambda_budget=float("nan"),
        n_k=n_k,
        full_count=full,
        mode=Mode.MIXED,
    )


def sparse_grid_level(params: SpaceParams, N: int) -> int:  # noqa: N803
    """Return the largest K whose sparse grid budget fits into N.

    Raises:
        BudgetError: If not even K = 0 fits.
    """
    if sparse_grid_budget(params, 0).N > N:
        raise BudgetError(f"N={N} cannot hold the level-0 sparse grid")
    K = 0  # noqa: N806
    while sparse_grid_budget(params, K + 1).N <= N:
        K += 1  # noqa: N806
    return K


def select_sparse_grid(
    e: Expansion, K: int, params: SpaceParams  # noqa: N803
) -> NTermApproximation:
    """Keep ||k||_1 <= K in full and the n_k largest terms per block on K < ||k||_1 <= K*.

    With delta = 0 the band is empty and the result is the plain ||k||_1 <= K
    truncation.

    Raises:
        BudgetError: If the band exceeds its budget.
    """
    budget = sparse_grid_budget(params, K)
    populated, truncated = _check_populated(e, budget)
    kept: list[tuple[DyadicIndex, float]] = []
    band = 0
    for levels, block in e.group_by_level(Mode.MIXED).items():
        total = sum(levels)
        if total <= K:
            kept.extend(block)
        elif total <= budget.K_star:
            chosen = top_terms(block, budget.n_k[total])
            band += len(chosen)
            kept.extend(chosen)
    if band > budget.N - budget.full_count:
        raise BudgetError(f"Band kept {band} terms, budget is {budget.N - budget.full_count}")
    logger.debug(
        "Sparse grid K=%d K*=%d kept %d terms (N(K)=%.1f)",
        K,
        budget.K_star,
        len(kept),
        mixed_term_count(params, K),
    )
    return NTermApproximation(Expansion(e.order, e.dim, kept), budget, populated, truncated)


def adaptive_sparse_grid(e: Expansion, K: int, params: SpaceParams) -> Expansion:  # noqa: N803
    """Return the expansion of ``select_sparse_grid``."""
    return select_sparse_grid(e, K, params).expansion


def full_level_truncation(e: Expansion, N: int) -> Expansion:  # noqa: N803
    """Keep every term on the isotropic levels 0..K for the largest K with full blocks <= N.

    This is the linear baseline at budget N.
    """
    K = -1  # noqa: N806
    while full_count(K + 1, e.dim, e.order) <= N:
        K += 1  # noqa: N806
    return e.restrict(lambda index, _: max(index.levels) <= K)


def full_grid_truncation(e: Expansion, N: int) -> Expansion:  # noqa: N803
    """Keep every term with ||k||_inf <= K for the largest K whose full grid fits into N."""
    K = -1  # noqa: N806
    while True:
        grid = itertools.product(range(K + 2), repeat=e.dim)
        if sum(level_size(k, e.order) for k in grid) > N:
            break
        K += 1  # noqa: N806
    return e.restrict(lambda index, _: max(index.levels) <= K)


def quadrature_points(
    d: int, resolution: int | None = None, seed: int = 0
) -> tuple[NDArray[np.float64], str]:
    """Return L^r quadrature points on [0, 1]^d and the rule name.

    Midpoint rule with 2^14 points (d = 1) or 512^2 (d = 2); Monte Carlo with
    200000 points for d >= 3. ``resolution`` overrides the per-axis count (or
    the sample count for Monte Carlo).
    """
    if d == 1:
        n = resolution or 2**14
        return ((np.arange(n) + 0.5) / n).reshape(-1, 1), "midpoint"
    if d == 2:
        n = resolution or 512
        axis = (np.arange(n) + 0.5) / n
        return np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2), "midpoint"
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.uniform(0.0, 1.0, size=(resolution or 200_000, d)), "monte_carlo"


def lr_norm(values: NDArray[np.float64], r: float) -> float:
    """Return the equal-weight L^r norm of sampled values; r = inf gives the max."""
    magnitudes = np.abs(values)
    if math.isinf(r):
        return float(np.max(magnitudes))
    return float(np.mean(magnitudes**r) ** (1.0 / r))


def lr_error(
    f: BlackBox | Expansion,
    g: BlackBox | Expansion,
    d: int,
    r: float = 2.0,
    resolution: int | None = None,
    seed: int = 0,
) -> float:
    """Return ||f - g||_{L^r([0,1]^d)} by the quadrature rules of ``quadrature_points``."""
    points, _ = quadrature_points(d, resolution, seed)
    return lr_norm(np.asarray(f(points)) - np.asarray(g(points)), r)
