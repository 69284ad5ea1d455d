"""Desk-scale rate and certification experiments.

These runs take minutes and are deselected by default; run them with
``pytest -m acceptance``.
"""

from typing import Any

import numpy as np
import pytest

from besov_relu.approx import (
    adaptive_sparse_grid,
    full_grid_truncation,
    lr_error,
    sample_besov_function,
)
from besov_relu.bench import ExperimentConfig, check_thresholds, fit_rate, run_experiment
from besov_relu.compiler import build_clip, build_mult, certify_unit
from besov_relu.models import SpaceParams

pytestmark = pytest.mark.acceptance

SEEDS = list(range(20))


def slopes(summary: dict[str, Any]) -> dict[str, float]:
    return {method: entry["slope"] for method, entry in summary["methods"].items()}


class TestUnitCertification:
    """Certified B-spline units."""

    @pytest.mark.parametrize(("d", "m"), [(1, 1), (1, 2), (2, 2)])
    @pytest.mark.parametrize("eps", [1e-1, 1e-2])
    def test_unit(self, d: int, m: int, eps: float) -> None:
        """Test the grid sup error and the size class of every unit."""
        certificate = certify_unit(d, m, eps)
        assert certificate.observed_error <= eps
        assert certificate.exterior_zero
        assert certificate.bounds.admits(certificate.budget)
        assert certificate.bounds.width == 6 * d * m * (m + 2) + 2 * d
        assert certificate.bounds.magnitude == 2 * (m + 1) ** m
        assert certificate.passed


class TestGadgets:
    """Exactness of the clip and multiplication gadgets."""

    def test_clip(self) -> None:
        """Test clipping is exact on a 10^4 point grid."""
        x = np.linspace(-3.0, 4.0, 10_000)
        out = build_clip(1.0).evaluate(x.reshape(-1, 1))[:, 0]
        np.testing.assert_array_equal(out, np.minimum(1.0, np.maximum(x, 0.0)))

    @pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-3])
    def test_mult(self, eps: float) -> None:
        """Test the product error on a 101^2 grid and exact zero at the origin."""
        net = build_mult(2, eps)
        axis = np.linspace(0.0, 1.0, 101)
        grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
        out = net.evaluate(grid)[:, 0]
        assert np.max(np.abs(out - grid[:, 0] * grid[:, 1])) <= eps
        assert net.evaluate([0.0, 0.0])[0] == 0.0


class TestApproximationRates:
    """Adaptive against linear approximation on spiky unit balls."""

    @pytest.fixture(scope="class")
    def approx_summary(self) -> dict[str, Any]:
        cfg = ExperimentConfig.from_dict(
            {
                "kind": "approx_rate",
                "space": {"s": 1.0, "p": 1.0, "q": 1.0, "r": 2.0, "d": 1, "m": 3},
                "grid": [2**k for k in range(4, 11)],
                "seeds": SEEDS,
                "target": "spike-train",
                "methods": ["adaptive", "full_level"],
                "threads": 4,
                "thresholds": {"adaptive": [-1.15, -0.85], "full_level": [-0.65, -0.35]},
            }
        )
        summary = run_experiment(cfg).summary
        assert check_thresholds(cfg, summary) == []
        return summary

    def test_adaptive_slope(self, approx_summary: dict[str, Any]) -> None:
        """Test the adaptive error decays like N^-1."""
        assert -1.15 <= slopes(approx_summary)["adaptive"] <= -0.85

    def test_linear_gap(self, approx_summary: dict[str, Any]) -> None:
        """Test full-level truncation decays like N^-1/2, well behind adaptive."""
        fitted = slopes(approx_summary)
        assert -0.65 <= fitted["full_level"] <= -0.35
        assert fitted["adaptive"] - fitted["full_level"] <= -0.3


class TestSparseGrid:
    """Sparse against full grids for a three-dimensional mixed smooth target."""

    def test_dimension_easing(self) -> None:
        """Test the sparse grid beats N^-2/3 at matched term counts."""
        params = SpaceParams(s=2.0, p=2.0, q=2.0, r=2.0, d=3, m=3, mixed=True)
        target = sample_besov_function(params, 1.0, 7, 0)
        sparse_points, full_points = [], []
        for K in range(2, 7):  # noqa: N806
            sparse = adaptive_sparse_grid(target, K, params)
            full = full_grid_truncation(target, len(sparse))
            for approx, points in ((sparse, sparse_points), (full, full_points)):
                kept = set(approx.indices)
                dropped = target.restrict(lambda index, _: index not in kept)
                error = lr_error(dropped, lambda x: np.zeros(len(x)), 3, resolution=4096)
                points.append((len(sparse), error))
        assert fit_rate(sparse_points)[0] <= -1.4
        assert fit_rate(full_points)[0] >= -0.9


class TestEstimationRates:
    """Adaptive dictionary against kernel ridge regression."""

    @staticmethod
    def config(grid: list[int], methods: list[str]) -> ExperimentConfig:
        return ExperimentConfig.from_dict(
            {
                "kind": "estimate_rate",
                "space": {"s": 1.0, "p": 1.0, "q": 1.0, "r": 2.0, "d": 1, "m": 2},
                "grid": grid,
                "seeds": list(range(10)),
                "target": "spike-train",
                "target_options": {"max_level": 10},
                "methods": methods,
                "sigma": 0.1,
                "threads": 4,
            }
        )

    @pytest.fixture(scope="class")
    def adaptive_slope(self) -> float:
        summary = run_experiment(self.config([2**k for k in range(8, 15)], ["adaptive"])).summary
        return slopes(summary)["adaptive"]

    def test_adaptive(self, adaptive_slope: float) -> None:
        """Test the adaptive risk decays like n^-2/3."""
        assert -0.81 <= adaptive_slope <= -0.52

    def test_kernel_ridge(self, adaptive_slope: float) -> None:
        """Test the best kernel stays at n^-1/2 or slower and behind adaptive."""
        summary = run_experiment(
            self.config([2**k for k in range(8, 13)], ["krr_gaussian", "krr_spline"])
        ).summary
        best = min(slopes(summary).values())
        assert best >= -0.58
        assert adaptive_slope <= best - 0.08
