"""Data models and type definitions for the besov-relu package."""

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, TypedDict

from besov_relu.exceptions import DimensionMismatchError, ParameterError

MAX_ORDER = 24


class Mode(str, Enum):
    """Smoothness model of a coefficient sequence.

    Attributes:
        ISOTROPIC: Ordinary Besov space, one scalar level per term.
        MIXED: Mixed smooth Besov space, one level per coordinate.
    """

    ISOTROPIC = "isotropic"
    MIXED = "mixed"

    @classmethod
    def from_string(cls, mode: str) -> "Mode":
        """Convert a string to a Mode enum.

        Raises:
            ValueError: If the mode string is not valid.

        Example:
            >>> Mode.from_string("mixed")
            <Mode.MIXED: 'mixed'>
        """
        try:
            return cls(mode)
        except ValueError:
            valid_modes = [v.value for v in cls]
            raise ValueError(f"Invalid mode '{mode}'. Valid modes: {valid_modes}") from None

    def __str__(self) -> str:
        """Return the mode string."""
        return self.value


class Family(str, Enum):
    """Closed-form rate families understood by ``rate_reference``.

    Attributes:
        BESOV: Estimation rate n^{-2s/(2s+d)} on Besov balls.
        MIXED: Estimation rate on mixed smooth Besov balls with polylog factor.
        MIXED_SECOND: The second, log-free mixed smooth estimation bound.
        LINEAR_LOWER: Lower rate of every linear estimator.
        MIXED_LOWER: Minimax lower rate on mixed smooth Besov balls.
        APPROX_ADAPTIVE: Adaptive approximation rate N^{-s/d}.
        APPROX_LINEAR: Linear approximation rate N^{-s/d + (1/p - 1/r)_+}.
    """

    BESOV = "besov"
    MIXED = "mixed"
    MIXED_SECOND = "mixed_second"
    LINEAR_LOWER = "linear_lower"
    MIXED_LOWER = "mixed_lower"
    APPROX_ADAPTIVE = "approx_adaptive"
    APPROX_LINEAR = "approx_linear"

    @classmethod
    def from_string(cls, family: str) -> "Family":
        """Convert a string to a Family enum.

        Raises:
            ValueError: If the family string is not valid.
        """
        try:
            return cls(family)
        except ValueError:
            valid = [v.value for v in cls]
            raise ValueError(f"Invalid rate family '{family}'. Valid families: {valid}") from None

    def __str__(self) -> str:
        """Return the family string."""
        return self.value


def positive_part(value: float) -> float:
    """Return max(value, 0)."""
    return value if value > 0 else 0.0


def parse_extended(value: Any) -> float:
    """Parse an extended real, accepting ``"inf"`` for infinity.

    Example:
        >>> parse_extended("inf")
        inf
        >>> parse_extended(2)
        2.0
    """
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "infinity", "+inf"):
            return math.inf
        try:
            return float(text)
        except ValueError:
            raise ParameterError(f"Cannot parse extended real from {value!r}") from None
    return float(value)


def format_extended(value: float) -> float | str:
    """Inverse of ``parse_extended`` for JSON output."""
    return "inf" if math.isinf(value) else value


@dataclass(frozen=True, order=True)
class DyadicIndex:
    """Address of one tensor B-spline basis function M_{k,j}.

    Ordering is lexicographic on (levels, shifts), which is the canonical
    term order used throughout the package.

    Attributes:
        levels: Level vector k, one nonnegative entry per coordinate.
        shifts: Shift vector j, one integer per coordinate.

    Example:
        >>> DyadicIndex((1, 0), (1, 0)).dim
        2
    """

    levels: tuple[int, ...]
    shifts: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple(int(k) for k in self.levels))
        object.__setattr__(self, "shifts", tuple(int(j) for j in self.shifts))
        if len(self.levels) != len(self.shifts):
            raise DimensionMismatchError("shift vector", len(self.levels), len(self.shifts))
        if not self.levels:
            raise ParameterError("DyadicIndex needs at least one coordinate")
        if any(k < 0 for k in self.levels):
            raise ParameterError(f"Levels must be nonnegative, got {self.levels}")

    @classmethod
    def isotropic(cls, level: int, shifts: tuple[int, ...]) -> "DyadicIndex":
        """Build an index with the same level in every coordinate."""
        return cls((level,) * len(shifts), shifts)

    @property
    def dim(self) -> int:
        """Return the dimension d."""
        return len(self.levels)

    @property
    def total_level(self) -> int:
        """Return ||k||_1."""
        return sum(self.levels)

    def in_range(self, m: int) -> bool:
        """Check j_i in {-m, ..., 2^{k_i}} for every coordinate."""
        return all(-m <= j <= 2**k for k, j in zip(self.levels, self.shifts))

    def support_box(self, m: int) -> tuple[tuple[float, float], ...]:
        """Return prod_i [2^{-k_i} j_i, 2^{-k_i}(j_i + m + 1)]."""
        return tuple(
            (j / 2**k, (j + m + 1) / 2**k) for k, j in zip(self.levels, self.shifts)
        )


@dataclass(frozen=True)
class SpaceParams:
    """Smoothness parameters (s, p, q, r, d, m) and the isotropic/mixed flag.

    Infinite p, q or r are represented by ``math.inf``.

    Attributes:
        s: Smoothness (alpha in the mixed case).
        p: Integrability exponent of the ball.
        q: Fine index.
        r: Exponent of the error norm.
        d: Dimension.
        m: Cardinal B-spline order.
        mixed: True for mixed smooth Besov spaces.

    Raises:
        ParameterError: If the parameters leave the admissible regime
            s > delta and 0 < s < min(m, m - 1 + 1/p).

    Example:
        >>> params = SpaceParams(s=1.0, p=1.0, q=1.0, r=2.0, d=1, m=3)
        >>> params.delta, params.nu
        (0.5, 0.5)
    """

    s: float
    p: float
    q: float
    r: float = 2.0
    d: int = 1
    m: int = 3
    mixed: bool = False

    def __post_init__(self) -> None:
        for name in ("s", "p", "q", "r"):
            object.__setattr__(self, name, parse_extended(getattr(self, name)))
        if not (math.isfinite(self.s) and self.s > 0):
            raise ParameterError(f"Smoothness s must be positive and finite, got {self.s}")
        for name in ("p", "q", "r"):
            value = getattr(self, name)
            if math.isnan(value) or value <= 0:
                raise ParameterError(f"Exponent {name} must lie in (0, inf], got {value}")
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"Dimension d must be a positive integer, got {self.d}")
        if int(self.m) != self.m or not 1 <= self.m <= MAX_ORDER:
            raise ParameterError(f"Spline order m must be in [1, {MAX_ORDER}], got {self.m}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "m", int(self.m))

        if self.s <= self.delta:
            raise ParameterError(
                f"Need s > {'' if self.mixed else 'd'}(1/p - 1/r)_+ = {self.delta}, got s={self.s}"
            )
        upper = min(self.m, self.m - 1 + 1 / self.p)
        if self.s >= upper:
            raise ParameterError(
                f"Need s < min(m, m - 1 + 1/p) = {upper} for m={self.m}, got s={self.s}"
            )

    @property
    def mode(self) -> Mode:
        """Return the smoothness model."""
        return Mode.MIXED if self.mixed else Mode.ISOTROPIC

    @property
    def delta(self) -> float:
        """Return delta: d(1/p - 1/r)_+ (isotropic) or (1/p - 1/r)_+ (mixed)."""
        gap = positive_part(1 / self.p - 1 / self.r)
        return gap if self.mixed else self.d * gap

    @property
    def nu(self) -> float | None:
        """Return nu = (s - delta)/(2 delta), or None when delta = 0."""
        if self.delta == 0:
            return None
        return (self.s - self.delta) / (2 * self.delta)

    @property
    def nu_inverse(self) -> float:
        """Return 1/nu = 2 delta/(s - delta), which is 0 when delta = 0."""
        return 2 * self.delta / (self.s - self.delta)

    @property
    def level_weight_exponent(self) -> float:
        """Return s - d/p (isotropic) or s - 1/p (mixed)."""
        return self.s - (1 if self.mixed else self.d) / self.p

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-ready dictionary."""
        data = asdict(self)
        for name in ("p", "q", "r"):
            data[name] = format_extended(data[name])
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SpaceParams":
        """Build parameters from a dictionary, accepting ``"inf"`` strings."""
        try:
            return cls(
                s=data["s"],
                p=data["p"],
                q=data["q"],
                r=data.get("r", 2.0),
                d=data.get("d", 1),
                m=data.get("m", 3),
                mixed=bool(data.get("mixed", False)),
            )
        except KeyError as e:
            raise ParameterError(f"Missing space parameter {e.args[0]!r}") from e


class TermEntry(TypedDict):
    """One serialized expansion term; ``a`` is a binary64 decimal string."""

    k: list[int]
    j: list[int]
    a: str


class ExpansionDict(TypedDict):
    """Serialized Expansion."""

    m: int
    d: int
    terms: list[TermEntry]


# "in" is a keyword, hence the functional form; ``w`` holds [row, col, value] triplets.
LayerDict = TypedDict(
    "LayerDict", {"in": int, "out": int, "w": list[list[float]], "b": list[float]}
)


class NetworkDict(TypedDict):
    """Serialized SparseNetwork."""

    layers: list[LayerDict]


class BudgetDict(TypedDict):
    """Size budget (L, W, S, B) as written in certificates."""

    L: int
    W: int
    S: int
    B: float
