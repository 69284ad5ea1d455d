"""Target functions for the rate experiments, each tagged with its claimed space.

Entries built from B-spline expansions are certified by their exact
coefficient sequence norm. The smooth sine is certified analytically and
reports the sequence norm of its multilevel decomposition as an estimate.
"""

import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from besov_relu.approx import decompose_function, sample_besov_function
from besov_relu.bspline import Expansion, sequence_norm
from besov_relu.exceptions import ParameterError
from besov_relu.models import DyadicIndex, SpaceParams

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-9


class Certification(str, Enum):
    """How an entry's space membership is established."""

    SEQUENCE_NORM = "sequence_norm"
    ANALYTIC = "analytic"


@dataclass(frozen=True)
class CorpusFunction:
    """A named target on [0, 1]^d with its claimed ball in a Besov-type space.

    Attributes:
        name: Registry name.
        space: The space the function is claimed to lie in.
        radius: Claimed radius of the ball.
        certification: How membership is checked.
        options: Constructor parameters.
        expansion: Exact B-spline form, when the entry has one.
        function: Pointwise evaluation when there is no expansion.
    """

    name: str
    space: SpaceParams
    radius: float
    certification: Certification
    options: dict[str, Any] = field(default_factory=dict)
    expansion: Expansion | None = None
    function: Callable[[NDArray[np.float64]], NDArray[np.float64]] | None = None

    def __post_init__(self) -> None:
        if self.expansion is None and self.function is None:
            raise ParameterError(f"Corpus entry '{self.name}' has nothing to evaluate")

    @property
    def d(self) -> int:
        """Return the input dimension."""
        return self.space.d

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        """Evaluate on an (n, d) array."""
        points = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.expansion is not None:
            return np.asarray(self.expansion(points), dtype=np.float64)
        assert self.function is not None
        return np.asarray(self.function(points), dtype=np.float64)

    def as_expansion(self, max_level: int = 8) -> Expansion:
        """Return the exact expansion, or the multilevel decomposition up to ``max_level``."""
        if self.expansion is not None:
            return self.expansion
        return decompose_function(self, self.space, max_level)

    def certify(self, max_level: int = 6) -> dict[str, Any]:
        """Check the claimed membership and return the certificate.

        Sequence-norm entries pass when the exact norm is at most the radius.
        Analytic entries always pass; their norm field is the decomposition
        estimate up to ``max_level``.
        """
        norm = sequence_norm(self.as_expansion(max_level), self.space)
        if self.certification is Certification.SEQUENCE_NORM:
            passed = norm <= self.radius * (1 + NORM_TOLERANCE)
        else:
            passed = True
        logger.info(
            "Certified %s: norm=%.6g radius=%g passed=%s", self.name, norm, self.radius, passed
        )
        return {
            "name": self.name,
            "method": self.certification.value,
            "space": self.space.to_dict(),
            "radius": self.radius,
            "norm": norm,
            "passed": passed,
        }

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-ready description without the coefficients."""
        return {
            "name": self.name,
            "space": self.space.to_dict(),
            "radius": self.radius,
            "certification": self.certification.value,
            "options": self.options,
            "terms": None if self.expansion is None else len(self.expansion),
        }


def _rescaled(e: Expansion, params: SpaceParams, radius: float) -> Expansion:
    norm = sequence_norm(e, params)
    if norm == 0.0:
        raise ParameterError("Cannot rescale a zero expansion to a positive radius")
    return e.scaled(radius / norm)


def _factor_params(params: SpaceParams) -> SpaceParams:
    return SpaceParams(s=params.s, p=params.p, q=params.q, r=params.r, d=1, m=params.m)


def spike_train(
    params: SpaceParams | None = None,
    radius: float = 1.0,
    max_level: int = 12,
    seed: int = 0,
    spikes: int = 2,
    spike_share: float = 1 / 3,
) -> CorpusFunction:
    """Return a unit-ball B^1_{1,1} sample with a few dominant coefficients per level.

    Every level carries the same weighted mass: ``spikes`` coefficients hold
    ``spike_share`` of it and the rest is a Pareto background.
    """
    params = params or SpaceParams(s=1.0, p=1.0, q=1.0, r=2.0, d=1, m=3)
    expansion = sample_besov_function(params, radius, max_level, seed, spikes, spike_share)
    return CorpusFunction(
        name="spike-train",
        space=params,
        radius=radius,
        certification=Certification.SEQUENCE_NORM,
        options={
            "max_level": max_level,
            "seed": seed,
            "spikes": spikes,
            "spike_share": spike_share,
        },
        expansion=expansion,
    )


def smooth_sine(
    params: SpaceParams | None = None, amplitude: float = 0.5, frequency: int = 1
) -> CorpusFunction:
    """Return x -> amplitude * prod_i sin(2 pi frequency x_i).

    Analytic, so it lies in every ball of the tested spaces after rescaling.
    """
    params = params or SpaceParams(s=1.0, p=1.0, q=1.0, r=2.0, d=1, m=3)
    if frequency < 1:
        raise ParameterError(f"frequency must be >= 1, got {frequency}")

    def sine(x: NDArray[np.float64]) -> NDArray[np.float64]:
        return amplitude * np.prod(np.sin(2.0 * np.pi * frequency * x), axis=1)

    return CorpusFunction(
        name="smooth-sine",
        space=params,
        radius=abs(amplitude),
        certification=Certification.ANALYTIC,
        options={"amplitude": amplitude, "frequency": frequency},
        function=sine,
    )


def tensor_prod(
    params: SpaceParams | None = None, radius: float = 1.0, max_level: int = 5, seed: int = 0
) -> CorpusFunction:
    """Return prod_j g_j(x_j) with independent one-dimensional samples g_j.

    The coefficient of M_{k,j} is the product of the factor coefficients, so
    the mixed sequence norm is the product of the factor norms.
    """
    params = params or SpaceParams(s=1.0, p=1.0, q=1.0, r=2.0, d=2, m=2, mixed=True)
    factor_params = _factor_params(params)
    streams = np.random.SeedSequence(seed).generate_state(params.d)
    factors = [
        sample_besov_function(factor_params, 1.0, max_level, int(stream)) for stream in streams
    ]
    terms = {
        DyadicIndex(
            tuple(i.levels[0] for i in combo), tuple(i.shifts[0] for i in combo)
        ): math.prod(factor[i] for factor, i in zip(factors, combo))
        for combo in itertools.product(*(factor.indices for factor in factors))
    }
    expansion = _rescaled(Expansion(params.m, params.d, terms), params, radius)
    return CorpusFunction(
        name="tensor-prod",
        space=params,
        radius=radius,
        certification=Certification.SEQUENCE_NORM,
        options={"max_level": max_level, "seed": seed},
        expansion=expansion,
    )


def additive(
    params: SpaceParams | None = None, radius: float = 1.0, max_level: int = 8, seed: int = 0
) -> CorpusFunction:
    """Return sum_j g_j(x_j) with independent one-dimensional samples g_j.

    The missing coordinates are filled with the level-0 partition of unity
    sum_{l=-m}^{0} N_m(x - l) = 1 on [0, 1).
    """
    params = params or SpaceParams(s=1.0, p=1.0, q=1.0, r=2.0, d=2, m=2, mixed=True)
    factor_params = _factor_params(params)
    streams = np.random.SeedSequence(seed).generate_state(params.d)
    unity = range(-params.m, 1)
    terms: dict[DyadicIndex, float] = {}
    for axis, stream in enumerate(streams):
        g = sample_besov_function(factor_params, 1.0, max_level, int(stream))
        for index, value in g.items():
            for fill in itertools.product(unity, repeat=params.d - 1):
                shifts = fill[:axis] + index.shifts + fill[axis:]
                levels = (0,) * axis + index.levels + (0,) * (params.d - 1 - axis)
                key = DyadicIndex(levels, shifts)
                terms[key] = terms.get(key, 0.0) + value
    expansion = _rescaled(Expansion(params.m, params.d, terms), params, radius)
    return CorpusFunction(
        name="additive",
        space=params,
        radius=radius,
        certification=Certification.SEQUENCE_NORM,
        options={"max_level": max_level, "seed": seed},
        expansion=expansion,
    )


CORPUS: dict[str, Callable[..., CorpusFunction]] = {
    "spike-train": spike_train,
    "smooth-sine": smooth_sine,
    "tensor-prod": tensor_prod,
    "additive": additive,
}


def load_corpus(
    name: str, params: SpaceParams | None = None, **options: Any
) -> CorpusFunction:
    """Build a registered corpus entry.

    Raises:
        ParameterError: If the name is not registered.

    Example:
        >>> load_corpus("smooth-sine").certification.value
        'analytic'
    """
    if name not in CORPUS:
        raise ParameterError(f"Unknown corpus entry '{name}'. Expected one of {list(CORPUS)}")
    return CORPUS[name](params, **options)
