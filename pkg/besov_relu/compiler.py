"""ReLU gadgets and the compilation of B-spline expansions into sparse networks.

The building blocks are the exact clip network, the sawtooth squaring network,
a polarization pair product, a balanced multiplication tree and the
approximate tensor B-spline unit. ``compile_expansion`` places one unit per
expansion term behind its dyadic affine map and sums the units in one layer.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import sparse

from besov_relu.approx import dkd, mixed_term_count, tail_level
from besov_relu.bspline import Expansion, eval_tensor
from besov_relu.exceptions import BudgetError, ParameterError
from besov_relu.models import DyadicIndex, SpaceParams, positive_part
from besov_relu.network import (
    Junction,
    SizeReport,
    SparseNetwork,
    chain,
    combine,
    identity_network,
    linear_network,
    parallel_all,
)

logger = logging.getLogger(__name__)

MIN_EPS = 1e-12
MIN_MARGIN = 1e-10


@dataclass(frozen=True)
class CompilerConstants:
    """Accuracy split used inside one B-spline unit.

    Attributes:
        c_dm: The constant 1/(1 + 2de(2e)^m/sqrt(m)).
        eps_unit: Requested sup error of the unit.
        eps_mult: Accuracy of every multiplication tree, c_dm * eps_unit.
        eps_coord: Error of the polynomial part of one coordinate network.
        square_depth: Sawtooth iterations of the deepest multiplication tree.
    """

    c_dm: float
    eps_unit: float
    eps_mult: float
    eps_coord: float
    square_depth: int


@dataclass(frozen=True)
class UnitBounds:
    """The size class (L_0, W_0, S_0, B_0) every unit must fit into."""

    depth: int
    width: int
    nonzeros: int
    magnitude: float

    def admits(self, report: SizeReport) -> bool:
        """Check a size report against these bounds."""
        return report.within(self.depth, self.width, self.nonzeros, self.magnitude)

    def to_dict(self) -> dict[str, float]:
        """Return the bounds as {L, W, S, B}."""
        return {"L": self.depth, "W": self.width, "S": self.nonzeros, "B": self.magnitude}


@dataclass(frozen=True)
class UnitCertificate:
    """Verification record of a compiled B-spline unit."""

    d: int
    m: int
    eps_unit: float
    grid: int
    method: str
    c_dm: float
    observed_error: float
    exterior_zero: bool
    budget: SizeReport
    bounds: UnitBounds

    @property
    def passed(self) -> bool:
        """Return True when the error and the size class both hold."""
        return (
            self.observed_error <= self.eps_unit
            and self.exterior_zero
            and self.bounds.admits(self.budget)
        )

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON certificate sidecar."""
        return {
            "d": self.d,
            "m": self.m,
            "eps_unit": self.eps_unit,
            "grid": self.grid,
            "method": self.method,
            "c_dm": self.c_dm,
            "observed_error": self.observed_error,
            "exterior_zero": self.exterior_zero,
            "budget": self.budget.to_dict(),
            "bounds": self.bounds.to_dict(),
            "passed": self.passed,
        }


@dataclass(frozen=True)
class ArchitectureBudget:
    """Network size prescribed for approximating a ball with N basis units.

    Attributes:
        depth: L.
        width: W = N W_0.
        nonzeros: S = (L - 1) W_0^2 N + N.
        magnitude: Order-level magnitude bound B (no constant).
        eps_unit: Accuracy of every unit.
        N: Number of basis units.
        unit_width: W_0.
        K: Base sparse-grid level (mixed mode only).
        K_star: Tail cutoff (mixed mode only).
    """

    depth: int
    width: int
    nonzeros: int
    magnitude: float
    eps_unit: float
    N: int  # noqa: N815
    unit_width: int
    K: int | None = None  # noqa: N815
    K_star: int | None = None  # noqa: N815
    extras: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-ready dictionary."""
        return {
            "L": self.depth,
            "W": self.width,
            "S": self.nonzeros,
            "B": self.magnitude,
            "eps_unit": self.eps_unit,
            "N": self.N,
            "W0": self.unit_width,
            "K": self.K,
            "K_star": self.K_star,
            **self.extras,
        }


def c_dm(d: int, m: int) -> float:
    """Return c_(d,m) = 1/(1 + 2de(2e)^m/sqrt(m))."""
    return 1.0 / (1.0 + 2.0 * d * math.e * (2.0 * math.e) ** m / math.sqrt(m))


def _check_unit_args(d: int, m: int, eps: float) -> None:
    if int(d) != d or d < 1:
        raise ParameterError(f"Dimension d must be a positive integer, got {d!r}")
    if int(m) != m or m < 1:
        raise ParameterError(f"Spline order m must be a positive integer, got {m!r}")
    if not 0 < eps < 1:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")


def _depth_formula(d: int, m: int, log2_argument: float) -> int:
    """Return 3 + 2 ceil(log2_argument + 5) ceil(log2(d v m))."""
    top = max(d, m)
    return 3 + 2 * math.ceil(log2_argument + 5) * math.ceil(math.log2(top))


def unit_width_bound(d: int, m: int) -> int:
    """Return W_0 = 6dm(m+2) + 2d."""
    return 6 * d * m * (m + 2) + 2 * d


def unit_bounds(d: int, m: int, eps: float) -> UnitBounds:
    """Return (L_0, W_0, S_0, B_0) for a unit of accuracy ``eps``.

    Example:
        >>> unit_bounds(1, 2, 0.1).width
        50
    """
    _check_unit_args(d, m, eps)
    depth = _depth_formula(d, m, math.log2(3.0 ** max(d, m) / (eps * c_dm(d, m))))
    width = unit_width_bound(d, m)
    return UnitBounds(depth, width, depth * width**2, 2.0 * (m + 1) ** m)


def build_clip(M: float) -> SparseNetwork:  # noqa: N803
    """Return the exact network x -> min(M, max(x, 0)) = relu(x) - relu(x - M).

    Raises:
        ParameterError: If M <= 0.
    """
    if not (math.isfinite(M) and M > 0):
        raise ParameterError(f"Clip bound must be positive, got {M}")
    return chain(
        [
            linear_network([[1.0], [1.0]], [0.0, -float(M)]),
            linear_network([[1.0, -1.0]]),
        ],
        Junction.RELU,
    )


def build_square(s: int) -> SparseNetwork:
    """Return the sawtooth network F_s(u) = u - sum_{t<=s} g_t(u)/4^t.

    g_t is the t-fold tent map. On [0, 1] the error |F_s(u) - u^2| is at most
    2^{-2s-2} and F_s(u) >= u^2. Hidden neurons hold (acc, relu(y), relu(y - 1/2))
    where y = g_{t-1}(u); depth is s + 1 and width 3.
    """
    if int(s) != s or s < 1:
        raise ParameterError(f"Sawtooth iterations must be a positive integer, got {s!r}")
    layers = [linear_network([[1.0], [1.0], [1.0]], [0.0, 0.0, -0.5])]
    for t in range(1, s):
        scale = 4.0**-t
        layers.append(
            linear_network(
                [[1.0, -2.0 * scale, 4.0 * scale], [0.0, 2.0, -4.0], [0.0, 2.0, -4.0]],
                [0.0, 0.0, -0.5],
            )
        )
    scale = 4.0**-s
    layers.append(linear_network([[1.0, -2.0 * scale, 4.0 * scale]]))
    return chain(layers, Junction.RELU)


def build_pair_product(s: int) -> SparseNetwork:
    """Return a network for xy on [0, 1]^2 with error at most 6 * 2^{-2s-2}.

    Uses xy = 2[F((x+y)/2) - F(x/2) - F(y/2)] and clips the result to [0, 1].
    The output is exactly 0 whenever x or y is exactly 0.
    """
    square = build_square(s)
    spread = linear_network([[0.5, 0.5], [0.5, 0.0], [0.0, 0.5]])
    squares = chain([spread, parallel_all([square, square, square])], Junction.FUSED)
    polarize = chain([linear_network([[2.0, -2.0, -2.0]]), build_clip(1.0)], Junction.FUSED)
    return combine(squares, polarize, junction=Junction.RELU)


def mult_square_depth(D: int, eps: float) -> int:  # noqa: N803
    """Return the smallest s >= 1 with 6(2^levels - 1) 4^{-s-1} <= eps."""
    levels = (D - 1).bit_length()
    s = 1
    while 6 * (2**levels - 1) > eps * 4.0 ** (s + 1):
        s += 1
    return s


def build_mult(D: int, eps: float) -> SparseNetwork:  # noqa: N803
    """Return a network approximating prod x_i on [0, 1]^D within ``eps``.

    Pair products are arranged in a balanced tree of ceil(log2 D) levels; an
    odd leftover is carried to the next level by an identity. The output lies
    in [0, 1] and is exactly 0 when any input is exactly 0.

    Raises:
        ParameterError: If D < 2 or eps is outside (0, 1).
        BudgetError: If eps is below 1e-12.

    Example:
        >>> net = build_mult(2, 0.01)
        >>> abs(float(net.evaluate([0.3, 0.5])[0]) - 0.15) <= 0.01
        True
    """
    if int(D) != D or D < 2:
        raise ParameterError(f"Multiplication needs D >= 2 inputs, got {D!r}")
    if not 0 < eps < 1:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    if eps < MIN_EPS:
        raise BudgetError(f"eps={eps} is below the supported floor {MIN_EPS}")
    s = mult_square_depth(D, eps)
    pair = build_pair_product(s)
    stages = []
    width = int(D)
    while width > 1:
        parts = [pair] * (width // 2)
        if width % 2:
            parts.append(identity_network(1))
        stages.append(parallel_all(parts, nonnegative=True))
        width = (width + 1) // 2
    logger.debug("Multiplication tree D=%d eps=%g: %d levels, s=%d", D, eps, len(stages), s)
    return chain(stages, Junction.FUSED)


def compiler_constants(d: int, m: int, eps: float) -> CompilerConstants:
    """Return the accuracy split for a (d, m) unit of accuracy ``eps``."""
    _check_unit_args(d, m, eps)
    c = c_dm(d, m)
    eps_mult = c * eps
    eps_coord = math.e * (2.0 * math.e) ** m / math.sqrt(m) * eps_mult
    top = max(d, m)
    depth = mult_square_depth(top, eps_mult) if top >= 2 else 0
    return CompilerConstants(c, eps, eps_mult, eps_coord, depth)


def spline_weights(m: int) -> list[float]:
    """Return w_j = (-1)^j C(m+1, j)(m+1)^m/m! for j = 0..m."""
    return [
        (-1) ** j * math.comb(m + 1, j) * (m + 1) ** m / math.factorial(m) for j in range(m + 1)
    ]


def _coordinate_network(m: int, consts: CompilerConstants) -> SparseNetwork:
    """Return the one-dimensional network approximating N_m, exactly 0 off [0, m+1]."""
    # relu of u - j (j = 0..m) and of u - (m + 1)
    first = linear_network(np.ones((m + 2, 1)), -np.arange(m + 2, dtype=np.float64))
    ramps = np.zeros((m + 2, m + 2))
    for j in range(m + 1):
        ramps[j, j] = 1.0 / (m + 1)
        ramps[j, m + 1] = -1.0 / (m + 1)
    ramps[m + 1, 0] = 1.0
    ramps[m + 1, m + 1] = -1.0
    # rows: c_0..c_m, then phi = clip of u to [0, m + 1]
    if m == 1:
        powers = chain([first, linear_network(ramps)], Junction.RELU)
    else:
        duplicate = np.vstack([np.repeat(ramps[:-1], m, axis=0), ramps[-1:]])
        mult = build_mult(m, consts.eps_mult)
        inner = parallel_all([mult] * (m + 1) + [identity_network(1)], nonnegative=True)
        powers = chain(
            [first, chain([linear_network(duplicate), inner], Junction.FUSED)], Junction.RELU
        )

    weights = spline_weights(m)
    tail = float(np.dot(weights, powers.evaluate([float(m + 1)])[: m + 1]))
    margin = (consts.eps_coord - abs(tail)) / 2.0
    if margin < MIN_MARGIN:
        raise BudgetError(
            f"Tail value {tail:.3g} leaves no margin below eps'={consts.eps_coord:.3g}"
        )
    logger.debug("Coordinate network m=%d: tail=%.3g margin=%.3g", m, tail, margin)
    head = linear_network([weights + [-tail / (m + 1)]], [-margin])
    return chain([powers, head, build_clip(1.0)], Junction.FUSED)


def build_bspline_unit(d: int, m: int, eps: float) -> tuple[SparseNetwork, SizeReport]:
    """Return a network within ``eps`` of M_{0,0} = prod_i N_m(x_i) and its size.

    The network is exactly 0 outside [0, m+1]^d.

    Raises:
        ParameterError: If d < 1, m < 1 or eps is outside (0, 1).
        BudgetError: If eps is too small for the budget arithmetic.

    Example:
        >>> net, report = build_bspline_unit(1, 1, 0.1)
        >>> float(net.evaluate([-0.5])[0])
        0.0
    """
    consts = compiler_constants(d, m, eps)
    if consts.eps_mult < MIN_EPS:
        raise BudgetError(f"eps={eps} is too small for (d={d}, m={m})")
    coordinate = _coordinate_network(m, consts)
    if d == 1:
        net = coordinate
    else:
        net = chain(
            [parallel_all([coordinate] * d, nonnegative=True), build_mult(d, consts.eps_mult)],
            Junction.FUSED,
        )
    report = net.size_report()
    bounds = unit_bounds(d, m, eps)
    if not bounds.admits(report):
        logger.warning("Unit (d=%d, m=%d, eps=%g) exceeds %s: %s", d, m, eps, bounds, report)
    logger.debug("Unit (d=%d, m=%d, eps=%g): %s", d, m, eps, report)
    return net, report


def certify_unit(
    d: int,
    m: int,
    eps: float,
    net: SparseNetwork | None = None,
    grid: int = 201,
    samples: int = 100_000,
    seed: int = 0,
) -> UnitCertificate:
    """Measure the sup error of a unit on [-1, m+2]^d and check its size class.

    A 201^d grid is used for d <= 2 and uniform random points otherwise.
    Random points outside [0, m+1]^d check the exact vanishing tail.
    """
    if net is None:
        net, _ = build_bspline_unit(d, m, eps)
    rng = np.random.Generator(np.random.Philox(seed))
    if d <= 2:
        axis = np.linspace(-1.0, m + 2.0, grid)
        points = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        method, resolution = "grid", grid
    else:
        points = rng.uniform(-1.0, m + 2.0, size=(samples, d))
        method, resolution = "monte_carlo", samples
    target = eval_tensor(DyadicIndex((0,) * d, (0,) * d), m, points)
    observed = float(np.max(np.abs(net.evaluate(points)[:, 0] - target)))

    exterior = rng.uniform(-1.0, m + 2.0, size=(4096, d))
    outside = np.any((exterior < 0.0) | (exterior > m + 1.0), axis=1)
    exterior_zero = bool(np.all(net.evaluate(exterior[outside])[:, 0] == 0.0))
    certificate = UnitCertificate(
        d=d,
        m=m,
        eps_unit=eps,
        grid=resolution,
        method=method,
        c_dm=c_dm(d, m),
        observed_error=observed,
        exterior_zero=exterior_zero,
        budget=net.size_report(),
        bounds=unit_bounds(d, m, eps),
    )
    logger.info(
        "Certified unit (d=%d, m=%d, eps=%g): error=%.3g passed=%s",
        d,
        m,
        eps,
        observed,
        certificate.passed,
    )
    return certificate


def compile_expansion(e: Expansion, eps_unit: float) -> SparseNetwork:
    """Compile sum a_{k,j} M_{k,j} into one network.

    Units are stacked in canonical term order; each is preceded by the map
    x -> 2^k x - j fused into its first layer, and the coefficients are fused
    into the last layer. An empty expansion gives the exact zero network.

    Example:
        >>> net = compile_expansion(Expansion(1, 1), 0.01)
        >>> float(net.evaluate([0.5])[0])
        0.0
    """
    if len(e) == 0:
        return linear_network(sparse.csr_matrix((1, e.dim)))
    if not 0 < eps_unit < 1:
        raise ParameterError(f"eps_unit must lie in (0, 1), got {eps_unit}")
    unit, _ = build_bspline_unit(e.dim, e.order, eps_unit)
    d = e.dim
    rows = np.arange(len(e) * d)
    scales = np.array([2.0**k for index in e.indices for k in index.levels])
    offsets = -np.array([float(j) for index in e.indices for j in index.shifts])
    dilate = linear_network(
        sparse.csr_matrix((scales, (rows, np.tile(np.arange(d), len(e)))), shape=(len(e) * d, d)),
        offsets,
    )
    total = linear_network(e.coefficients.reshape(1, -1))
    net = chain([dilate, parallel_all([unit] * len(e)), total], Junction.FUSED)
    logger.info("Compiled %d terms (d=%d, m=%d): %s", len(e), d, e.order, net.size_report())
    return net


def expansion_error_bound(e: Expansion, eps_unit: float) -> float:
    """Return eps_unit * sum_k min(sum_j |a_{k,j}|, (m+1)^d max_j |a_{k,j}|).

    At most (m+1)^d supports of one level vector overlap at a point.
    """
    overlap = (e.order + 1) ** e.dim
    groups: dict[tuple[int, ...], list[float]] = {}
    for index, value in e.items():
        groups.setdefault(index.levels, []).append(abs(value))
    return eps_unit * sum(min(sum(v), overlap * max(v)) for v in groups.values())


def sparsity_budget(L: int, unit_width: int, N: int) -> int:  # noqa: N803
    """Return S = (L - 1) W_0^2 N + N."""
    return (L - 1) * unit_width**2 * N + N


def architecture_budget(params: SpaceParams, N: int) -> ArchitectureBudget:  # noqa: N803
    """Return the (L, W, S, B, eps) prescription for N basis units.

    Isotropic: eps = N^{-s/d - (1/nu + 1/d)(d/p - s)_+}/ln N with depth from
    the unit formula. Mixed: K is the largest level with N(K) <= N, K* follows,
    and the depth carries the additive K* term.

    Raises:
        ParameterError: If N is too small for the formula.
        BudgetError: If no mixed level K >= 1 fits into N.

    Example:
        >>> params = SpaceParams(s=1.0, p=2.0, q=2.0, r=2.0, d=1, m=2)
        >>> round(architecture_budget(params, 16).eps_unit, 5)
        0.02254
    """
    d, m, s, p = params.d, params.m, params.s, params.p
    width0 = unit_width_bound(d, m)
    c = c_dm(d, m)
    if not params.mixed:
        if N < 2:
            raise ParameterError(f"Isotropic budget needs N >= 2, got {N}")
        excess = positive_part(d / p - s)
        eps = N ** (-s / d - (params.nu_inverse + 1 / d) * excess) / math.log(N)
        depth = _depth_formula(d, m, math.log2(3.0**max(d, m) / (eps * c)))
        magnitude = float(N) ** ((params.nu_inverse + 1 / d) * max(1.0, excess))
        return ArchitectureBudget(
            depth=depth,
            width=N * width0,
            nonzeros=sparsity_budget(depth, width0, N),
            magnitude=magnitude,
            eps_unit=eps,
            N=N,
            unit_width=width0,
        )

    level = 0
    while mixed_term_count(params, level + 1) <= N:
        level += 1
    if level == 0:
        raise BudgetError(f"N={N} is below the smallest mixed budget {mixed_term_count(params, 1)}")
    k_star = tail_level(params, level)
    excess = positive_part(1 / p - s)
    extra = (s + excess + 1) * k_star + math.log((math.e * (m + 1)) ** d * (1 + k_star))
    depth = _depth_formula(d, m, math.log2(3.0**max(d, m) / c) + extra)
    magnitude = float(N) ** ((params.nu_inverse + 1) * max(1.0, excess))
    return ArchitectureBudget(
        depth=depth,
        width=N * width0,
        nonzeros=sparsity_budget(depth, width0, N),
        magnitude=magnitude,
        eps_unit=math.exp(-extra),
        N=N,
        unit_width=width0,
        K=level,
        K_star=k_star,
        extras={"D_Kstar_d": dkd(k_star, d)},
    )
