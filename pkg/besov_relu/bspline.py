"""Cardinal B-splines, dyadic tensor bases, finite expansions and sequence norms."""

import itertools
import json
import logging
import math
from collections.abc import Callable, Iterable, Iterator, Mapping
from fractions import Fraction
from functools import lru_cache
from typing import Any, overload

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import sparse
from scipy.integrate import trapezoid
from scipy.special import comb

from besov_relu.exceptions import DimensionMismatchError, NonFiniteError, ParameterError
from besov_relu.models import MAX_ORDER, DyadicIndex, ExpansionDict, Mode, SpaceParams

logger = logging.getLogger(__name__)

EVAL_CHUNK = 16_384


def _check_order(m: int) -> int:
    if int(m) != m:
        raise ParameterError(f"Spline order must be an integer, got {m!r}")
    if not 0 <= m <= MAX_ORDER:
        raise ParameterError(f"Spline order must be in [0, {MAX_ORDER}], got {m}")
    return int(m)


class CardinalBSpline:
    """The cardinal B-spline N_m of order m, stored piecewise.

    On the unit interval [i, i+1), i = 0..m, the spline is the polynomial
    ``sum_p pieces[i, p] * (x - i)**p``. The coefficients come from the
    closed form (1/m!) sum_j (-1)^j C(m+1, j) (x - j)_+^m expanded in exact
    rational arithmetic and rounded once to binary64.

    Attributes:
        order: The order m (degree m, support [0, m+1]).
        pieces: Array of shape (m+1, m+1), row i holds the ascending
            coefficients of the polynomial on [i, i+1).

    Example:
        >>> spline = CardinalBSpline(2)
        >>> float(spline(1.5))
        0.75
    """

    __slots__ = ("_order", "_pieces")

    def __init__(self, order: int) -> None:
        """Derive the piecewise coefficients for order ``order``."""
        m = _check_order(order)
        self._order = m
        scale = Fraction(1, math.factorial(m))
        table = np.zeros((m + 1, m + 1), dtype=np.float64)
        for i in range(m + 1):
            for power in range(m + 1):
                total = Fraction(0)
                for j in range(i + 1):
                    total += (
                        (-1) ** j
                        * math.comb(m + 1, j)
                        * math.comb(m, power)
                        * Fraction(i - j) ** (m - power)
                    )
                table[i, power] = float(total * scale)
        table.setflags(write=False)
        self._pieces = table

    @property
    def order(self) -> int:
        """Return the order m."""
        return self._order

    @property
    def pieces(self) -> NDArray[np.float64]:
        """Return the read-only coefficient table."""
        return self._pieces

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        """Evaluate N_m elementwise by Horner's rule on the active interval."""
        values = np.asarray(x, dtype=np.float64)
        m = self._order
        interval = np.floor(values)
        active = (interval >= 0) & (interval <= m)
        out = np.zeros(values.shape, dtype=np.float64)
        if not np.any(active):
            return out
        i = interval[active].astype(np.intp)
        t = values[active] - i
        coef = self._pieces[i]
        acc = coef[:, m].copy()
        for power in range(m - 1, -1, -1):
            acc = acc * t + coef[:, power]
        out[active] = np.clip(acc, 0.0, 1.0)
        return out

    def __repr__(self) -> str:
        """Return string representation."""
        return f"CardinalBSpline(order={self._order})"


@lru_cache(maxsize=None)
def cardinal_bspline(m: int) -> CardinalBSpline:
    """Return the shared CardinalBSpline instance of order ``m``."""
    return CardinalBSpline(m)


@overload
def eval_cardinal(m: int, x: float) -> float: ...


@overload
def eval_cardinal(m: int, x: NDArray[np.float64]) -> NDArray[np.float64]: ...


def eval_cardinal(m: int, x: Any) -> Any:
    """Evaluate the cardinal B-spline N_m at ``x``.

    Scalars return a float, arrays return an array of the same shape.

    Raises:
        ParameterError: If m < 0 or m > 24.

    Example:
        >>> eval_cardinal(1, 1.0)
        1.0
    """
    spline = cardinal_bspline(_check_order(m))
    values = spline(x)
    if np.ndim(x) == 0:
        return float(values)
    return values


def _as_points(x: ArrayLike, d: int) -> tuple[NDArray[np.float64], bool]:
    """Return (points of shape (n, d), whether a single point was given)."""
    points = np.asarray(x, dtype=np.float64)
    single = points.ndim <= 1
    if points.ndim == 0:
        points = points.reshape(1, 1)
    elif points.ndim == 1:
        points = points.reshape(1, -1)
    elif points.ndim != 2:
        raise ParameterError(f"Points must be a vector or an (n, d) array, got ndim={points.ndim}")
    if points.shape[1] != d:
        raise DimensionMismatchError("point", d, points.shape[1])
    if not np.all(np.isfinite(points)):
        raise NonFiniteError("evaluation points")
    return points, single


def eval_tensor(index: DyadicIndex, m: int, x: ArrayLike) -> Any:
    """Evaluate M_{k,j}(x) = prod_i N_m(2^{k_i} x_i - j_i).

    ``x`` may be a single point (returns float) or an (n, d) array.

    Raises:
        DimensionMismatchError: If x and the index disagree in dimension.

    Example:
        >>> eval_tensor(DyadicIndex((1, 0), (1, 0)), 1, (1.0, 1.0))
        1.0
    """
    spline = cardinal_bspline(_check_order(m))
    points, single = _as_points(x, index.dim)
    scale = np.exp2(np.asarray(index.levels, dtype=np.float64))
    shifts = np.asarray(index.shifts, dtype=np.float64)
    values = np.prod(spline(points * scale - shifts), axis=1)
    return float(values[0]) if single else values


def design_matrix(
    indices: Iterable[DyadicIndex], m: int, x: ArrayLike
) -> sparse.csr_matrix:
    """Return the sparse matrix of basis values, rows = points, columns = indices.

    Terms are grouped by level vector. For each point only the (m+1)^d shifts
    whose support contains it are visited, so the cost is independent of the
    number of terms per level.

    Raises:
        ParameterError: If ``indices`` contains duplicates.
        DimensionMismatchError: If points and indices disagree in dimension.
    """
    spline = cardinal_bspline(_check_order(m))
    columns = list(indices)
    if not columns:
        points = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return sparse.csr_matrix((points.shape[0], 0), dtype=np.float64)
    if len(set(columns)) != len(columns):
        raise ParameterError("design_matrix needs distinct indices")
    d = columns[0].dim
    points, _ = _as_points(x, d)
    n = points.shape[0]

    groups: dict[tuple[int, ...], list[int]] = {}
    for col, index in enumerate(columns):
        if index.dim != d:
            raise DimensionMismatchError("index", d, index.dim)
        groups.setdefault(index.levels, []).append(col)

    offsets = np.array(list(itertools.product(range(m + 1), repeat=d)), dtype=np.int64)
    rows_out: list[NDArray[np.intp]] = []
    cols_out: list[NDArray[np.int64]] = []
    vals_out: list[NDArray[np.float64]] = []
    for levels, members in groups.items():
        level_arr = np.asarray(levels, dtype=np.int64)
        sizes = 2**level_arr + m + 1
        table = np.full(int(np.prod(sizes)), -1, dtype=np.int64)
        local = np.array([columns[c].shifts for c in members], dtype=np.int64) + m
        table[np.ravel_multi_index(local.T, sizes)] = members

        u = points * np.exp2(level_arr.astype(np.float64))
        base = np.floor(u).astype(np.int64)
        for offset in offsets:
            shifts = base - offset
            shifted = shifts + m
            valid = np.all((shifted >= 0) & (shifted < sizes), axis=1)
            if not np.any(valid):
                continue
            rows = np.flatnonzero(valid)
            cols = table[np.ravel_multi_index(shifted[valid].T, sizes)]
            hit = cols >= 0
            rows, cols = rows[hit], cols[hit]
            values = np.prod(spline(u[rows] - shifts[rows]), axis=1)
            keep = values != 0.0
            rows_out.append(rows[keep])
            cols_out.append(cols[keep])
            vals_out.append(values[keep])

    if rows_out:
        data = (
            np.concatenate(vals_out),
            (np.concatenate(rows_out), np.concatenate(cols_out)),
        )
        matrix = sparse.coo_matrix(data, shape=(n, len(columns))).tocsr()
    else:
        matrix = sparse.csr_matrix((n, len(columns)), dtype=np.float64)
    matrix.sort_indices()
    return matrix


class Expansion:
    """A finite B-spline expansion sum_{(k,j)} a_{k,j} M_{k,j}.

    Terms are kept sorted by DyadicIndex. Instances are immutable.

    Attributes:
        order: Spline order m shared by all terms.
        dim: Dimension d shared by all terms.

    Raises:
        ParameterError: If an index is out of the shift range J_m(k).
        DimensionMismatchError: If an index has the wrong dimension.
        NonFiniteError: If a coefficient is not finite.

    Example:
        >>> e = Expansion(1, 1, {DyadicIndex((0,), (0,)): 2.0})
        >>> e(1.0)
        2.0
    """

    __slots__ = ("_order", "_dim", "_indices", "_coefficients", "_lookup")

    def __init__(
        self,
        order: int,
        dim: int,
        terms: Mapping[DyadicIndex, float] | Iterable[tuple[DyadicIndex, float]] = (),
    ) -> None:
        """Initialize an Expansion.

        Args:
            order: Spline order m.
            dim: Dimension d.
            terms: Mapping or iterable of (index, coefficient) pairs.
        """
        self._order = _check_order(order)
        if int(dim) != dim or dim < 1:
            raise ParameterError(f"Dimension must be a positive integer, got {dim!r}")
        self._dim = int(dim)
        pairs = terms.items() if isinstance(terms, Mapping) else terms
        collected: dict[DyadicIndex, float] = {}
        for index, value in pairs:
            if index.dim != self._dim:
                raise DimensionMismatchError("index", self._dim, index.dim)
            if not index.in_range(self._order):
                raise ParameterError(f"Shift out of range for m={self._order}: {index}")
            if index in collected:
                raise ParameterError(f"Duplicate index {index}")
            coefficient = float(value)
            if not math.isfinite(coefficient):
                raise NonFiniteError(f"coefficient of {index}")
            collected[index] = coefficient
        self._indices = tuple(sorted(collected))
        coefficients = np.array([collected[i] for i in self._indices], dtype=np.float64)
        coefficients.setflags(write=False)
        self._coefficients = coefficients
        self._lookup = {index: pos for pos, index in enumerate(self._indices)}

    @property
    def order(self) -> int:
        """Return the spline order m."""
        return self._order

    @property
    def dim(self) -> int:
        """Return the dimension d."""
        return self._dim

    @property
    def indices(self) -> tuple[DyadicIndex, ...]:
        """Return the sorted term indices."""
        return self._indices

    @property
    def coefficients(self) -> NDArray[np.float64]:
        """Return the read-only coefficient vector aligned with ``indices``."""
        return self._coefficients

    def __len__(self) -> int:
        return len(self._indices)

    def __iter__(self) -> Iterator[DyadicIndex]:
        return iter(self._indices)

    def __contains__(self, index: object) -> bool:
        return index in self._lookup

    def __getitem__(self, index: DyadicIndex) -> float:
        return float(self._coefficients[self._lookup[index]])

    def items(self) -> Iterator[tuple[DyadicIndex, float]]:
        """Iterate (index, coefficient) pairs in canonical order."""
        return zip(self._indices, (float(a) for a in self._coefficients))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Expansion):
            return NotImplemented
        return (
            self._order == other._order
            and self._dim == other._dim
            and self._indices == other._indices
            and bool(np.array_equal(self._coefficients, other._coefficients))
        )

    def __hash__(self) -> int:
        return hash((self._order, self._dim, self._indices, self._coefficients.tobytes()))

    def __repr__(self) -> str:
        """Return string representation."""
        return f"Expansion(order={self._order}, dim={self._dim}, terms={len(self)})"

    def __call__(self, x: ArrayLike) -> Any:
        """Evaluate the expansion, see ``eval_expansion``."""
        return eval_expansion(self, x)

    def __add__(self, other: "Expansion") -> "Expansion":
        """Sum two expansions of equal order and dimension, adding shared terms."""
        if not isinstance(other, Expansion):
            return NotImplemented
        if (self._order, self._dim) != (other._order, other._dim):
            raise ParameterError("Cannot add expansions with different order or dimension")
        merged = dict(self.items())
        for index, value in other.items():
            merged[index] = merged.get(index, 0.0) + value
        return Expansion(self._order, self._dim, merged)

    def scaled(self, factor: float) -> "Expansion":
        """Return the expansion with every coefficient multiplied by ``factor``."""
        return Expansion(
            self._order, self._dim, zip(self._indices, self._coefficients * float(factor))
        )

    def restrict(self, keep: Callable[[DyadicIndex, float], bool]) -> "Expansion":
        """Return the sub-expansion of the terms for which ``keep`` is true."""
        return Expansion(self._order, self._dim, ((i, a) for i, a in self.items() if keep(i, a)))

    def pruned(self) -> "Expansion":
        """Return the expansion without exact-zero coefficients."""
        return self.restrict(lambda _, a: a != 0.0)

    def level_key(self, index: DyadicIndex, mode: Mode) -> int | tuple[int, ...]:
        """Return the grouping key: scalar level (isotropic) or level vector (mixed).

        Raises:
            ParameterError: If an isotropic key is requested for unequal levels.
        """
        if mode is Mode.MIXED:
            return index.levels
        if len(set(index.levels)) != 1:
            raise ParameterError(f"Isotropic expansions need equal levels, got {index.levels}")
        return index.levels[0]

    def group_by_level(
        self, mode: Mode = Mode.ISOTROPIC
    ) -> dict[Any, list[tuple[DyadicIndex, float]]]:
        """Group terms by level key, preserving canonical order within a level."""
        groups: dict[Any, list[tuple[DyadicIndex, float]]] = {}
        for index, value in self.items():
            groups.setdefault(self.level_key(index, mode), []).append((index, value))
        return groups

    def max_level(self) -> int:
        """Return the largest single-coordinate level, -1 for an empty expansion."""
        return max((max(i.levels) for i in self._indices), default=-1)

    def to_dict(self) -> ExpansionDict:
        """Return the JSON form; coefficients are round-trippable decimal strings."""
        return {
            "m": self._order,
            "d": self._dim,
            "terms": [
                {"k": list(i.levels), "j": list(i.shifts), "a": repr(a)} for i, a in self.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Expansion":
        """Build an expansion from its JSON form.

        Raises:
            ParameterError: If a required field is missing or malformed.
        """
        try:
            terms = [
                (DyadicIndex(tuple(t["k"]), tuple(t["j"])), float(t["a"])) for t in data["terms"]
            ]
            return cls(int(data["m"]), int(data["d"]), terms)
        except (KeyError, TypeError) as e:
            raise ParameterError(f"Malformed expansion document: {e}") from e

    def to_json(self, **kwargs: Any) -> str:
        """Serialize to a JSON string."""
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "Expansion":
        """Parse an expansion from a JSON string."""
        return cls.from_dict(json.loads(text))


def eval_expansion(e: Expansion, x: ArrayLike) -> Any:
    """Evaluate sum a_{k,j} M_{k,j}(x) at one point (float) or an (n, d) array.

    Example:
        >>> eval_expansion(Expansion(1, 1), 0.3)
        0.0
    """
    points, single = _as_points(x, e.dim)
    values = np.zeros(points.shape[0], dtype=np.float64)
    if len(e) > 0:
        for start in range(0, points.shape[0], EVAL_CHUNK):
            chunk = points[start : start + EVAL_CHUNK]
            values[start : start + EVAL_CHUNK] = (
                design_matrix(e.indices, e.order, chunk) @ e.coefficients
            )
    return float(values[0]) if single else values


def sequence_norm(e: Expansion, params: SpaceParams, mode: Mode | str | None = None) -> float:
    """Compute the Besov (or mixed smooth Besov) coefficient sequence quasi-norm.

    Isotropic: {sum_k [2^{k(s-d/p)} ||a_{k,.}||_p]^q}^{1/q}.
    Mixed: the same with weight 2^{(s-1/p)||k||_1} over level vectors.
    p or q equal to infinity switch to the max form.

    Raises:
        DimensionMismatchError: If the expansion and params disagree in d.
        ParameterError: If an isotropic norm is requested for unequal levels.
    """
    mode = params.mode if mode is None else Mode(mode)
    if e.dim != params.d:
        raise DimensionMismatchError("expansion", params.d, e.dim)
    if not np.all(np.isfinite(e.coefficients)):
        raise NonFiniteError("expansion coefficients")
    weight_exponent = params.s - (1 if mode is Mode.MIXED else params.d) / params.p
    weighted = []
    for key, block in e.group_by_level(mode).items():
        magnitudes = np.abs(np.array([a for _, a in block], dtype=np.float64))
        level = sum(key) if mode is Mode.MIXED else key
        weighted.append(2.0 ** (level * weight_exponent) * _lp(magnitudes, params.p))
    return _lp(np.asarray(weighted, dtype=np.float64), params.q)


def _lp(values: NDArray[np.float64], p: float) -> float:
    if values.size == 0:
        return 0.0
    if math.isinf(p):
        return float(np.max(values))
    peak = float(np.max(values))
    if peak == 0.0:
        return 0.0
    # scale by the peak so small p does not overflow
    return peak * float(np.sum((values / peak) ** p)) ** (1.0 / p)


def shift_range(level: int, m: int) -> range:
    """Return J_m(k) = {-m, ..., 2^k} for one coordinate."""
    return range(-m, 2**level + 1)


def level_indices(
    levels: tuple[int, ...], m: int, active: bool = False
) -> list[DyadicIndex]:
    """Return every index of the given level vector in canonical order.

    With ``active`` the shift 2^k is left out on every axis: its basis function
    vanishes on [0, 1)^d, and the remaining 2^k + m shifts span the level there.
    """
    ranges = [shift_range(k, m) for k in levels]
    if active:
        ranges = [r[:-1] for r in ranges]
    return [DyadicIndex(levels, shifts) for shifts in itertools.product(*ranges)]


def refine_coefficients(
    index: DyadicIndex, m: int, axes: Iterable[int] | None = None
) -> dict[DyadicIndex, float]:
    """Express M_{k,j} through basis functions one level finer.

    Uses N_m(x) = 2^{-m} sum_{i=0}^{m+1} C(m+1, i) N_m(2x - i) along every axis
    in ``axes`` (all axes by default). Children whose shift leaves J_m(k+1)
    vanish on [0, 1]^d and are dropped, so the identity holds on the unit cube.
    """
    m = _check_order(m)
    refine_axes = set(range(index.dim) if axes is None else axes)
    weights = [float(w) for w in comb(m + 1, np.arange(m + 2), exact=False) * 2.0**-m]
    per_axis: list[list[tuple[int, int, float]]] = []
    for axis, (k, j) in enumerate(zip(index.levels, index.shifts)):
        if axis in refine_axes:
            child_level = k + 1
            per_axis.append(
                [
                    (child_level, 2 * j + i, w)
                    for i, w in enumerate(weights)
                    if -m <= 2 * j + i <= 2**child_level
                ]
            )
        else:
            per_axis.append([(k, j, 1.0)])
    children: dict[DyadicIndex, float] = {}
    for combo in itertools.product(*per_axis):
        child = DyadicIndex(tuple(c[0] for c in combo), tuple(c[1] for c in combo))
        children[child] = math.prod(c[2] for c in combo)
    return children


def refine_expansion(e: Expansion, axes: Iterable[int] | None = None) -> Expansion:
    """Refine every term of ``e`` one level along ``axes`` (all by default)."""
    axes_list = None if axes is None else list(axes)
    refined: dict[DyadicIndex, float] = {}
    for index, value in e.items():
        for child, weight in refine_coefficients(index, e.order, axes_list).items():
            refined[child] = refined.get(child, 0.0) + value * weight
    return Expansion(e.order, e.dim, refined)


def partition_of_unity_error(m: int, samples: int = 1000, seed: int = 0) -> float:
    """Return max |sum_j N_m(x - j) - 1| over random x in [0, m+1]."""
    spline = cardinal_bspline(_check_order(m))
    rng = np.random.Generator(np.random.Philox(seed))
    x = rng.uniform(0.0, m + 1, size=samples)
    shifts = np.arange(-m - 1, m + 2)
    totals = spline(x[:, None] - shifts[None, :]).sum(axis=1)
    return float(np.max(np.abs(totals - 1.0)))


def convolution_error(m: int, points: int = 201, nodes: int = 2001) -> float:
    """Return the max gap between N_m and the quadrature of N_{m-1} * N_0.

    N_m(x) = int_0^1 N_{m-1}(x - t) dt, integrated by the trapezoid rule on
    sub-intervals split at the breakpoints of the integrand.
    """
    m = _check_order(m)
    if m == 0:
        raise ParameterError("Convolution identity needs m >= 1")
    lower = cardinal_bspline(m - 1)
    upper = cardinal_bspline(m)
    worst = 0.0
    inset = 1e-12
    for x in np.linspace(-0.5, m + 1.5, points):
        breaks = sorted({0.0, 1.0, *(x - i for i in range(m + 1) if 0.0 < x - i < 1.0)})
        total = 0.0
        for a, b in itertools.pairwise(breaks):
            t = np.linspace(a, b, max(3, int(nodes * (b - a))))
            t[0] += inset
            t[-1] -= inset
            total += float(trapezoid(lower(x - t), t))
        worst = max(worst, abs(total - float(upper(x))))
    return worst
