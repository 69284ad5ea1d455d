"""Tests for data generation, estimators, risk measurement and rate calculators."""

import math
from pathlib import Path

import numpy as np
import pytest

from besov_relu.approx import sample_besov_function
from besov_relu.bspline import design_matrix, level_indices
from besov_relu.corpus import spike_train
from besov_relu.exceptions import (
    DimensionMismatchError,
    ParameterError,
    SingularSystemError,
)
from besov_relu.models import SpaceParams
from besov_relu.regression import (
    MIN_SUPPORT_FACTOR,
    Dataset,
    RateParams,
    RegressionConfig,
    covering_number_bound,
    covering_number_bound_tight,
    empirical_l2_risk,
    fit_adaptive_dictionary,
    fit_dictionary,
    fit_krr,
    fit_krr_cv,
    generate_data,
    rate_reference,
    risk_bound,
    risk_bound_terms,
)


def sine(x: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * np.pi * x[:, 0])


@pytest.fixture
def spiky() -> SpaceParams:
    """Fixture for s = p = q = 1, r = 2 with quadratic splines."""
    return SpaceParams(s=1.0, p=1.0, q=1.0, r=2.0, d=1, m=2)


class TestGenerateData:
    """Tests for generate_data and Dataset."""

    def test_noiseless(self) -> None:
        """Test sigma = 0 gives y = f0(x) exactly."""
        data = generate_data(sine, RegressionConfig(n=100, sigma=0.0, seed=1))
        np.testing.assert_array_equal(data.y, sine(data.x))
        assert np.all((data.x >= 0.0) & (data.x < 1.0))

    def test_deterministic(self) -> None:
        """Test the same seed gives bit-identical data."""
        cfg = RegressionConfig(n=50, sigma=0.3, seed=4, d=2)
        first, second = generate_data(sine, cfg), generate_data(sine, cfg)
        np.testing.assert_array_equal(first.x, second.x)
        np.testing.assert_array_equal(first.y, second.y)

    def test_noise_variance(self) -> None:
        """Test the sample noise variance for sigma = 1."""
        data = generate_data(sine, RegressionConfig(n=100_000, sigma=1.0, seed=0))
        assert 0.98 <= float(np.var(data.y - sine(data.x), ddof=1)) <= 1.02

    @pytest.mark.parametrize(
        "kwargs",
        [{"n": 0, "sigma": 1.0}, {"n": 5, "sigma": -1.0}, {"n": 5, "sigma": 1.0, "F": 0.5}],
    )
    def test_invalid_config(self, kwargs: dict) -> None:
        """Test invalid configurations are rejected."""
        with pytest.raises(ParameterError):
            RegressionConfig(**kwargs)

    def test_csv_round_trip(self, tmp_path: Path) -> None:
        """Test the CSV form keeps every bit."""
        data = generate_data(sine, RegressionConfig(n=20, sigma=0.1, seed=2, d=2))
        path = tmp_path / "data.csv"
        data.to_csv(path)
        assert path.read_text().splitlines()[0] == "x_1,x_2,y"
        restored = Dataset.from_csv(path)
        np.testing.assert_array_equal(restored.x, data.x)
        np.testing.assert_array_equal(restored.y, data.y)

    def test_bad_header(self, tmp_path: Path) -> None:
        """Test a foreign CSV header is rejected."""
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ParameterError):
            Dataset.from_csv(path)

    def test_shape_mismatch(self) -> None:
        """Test x and y must agree in length."""
        with pytest.raises(DimensionMismatchError):
            Dataset(np.zeros((3, 1)), np.zeros(2))


class TestAdaptiveDictionary:
    """Tests for the clipped adaptive dictionary estimator."""

    def test_exact_recovery(self, spiky: SpaceParams) -> None:
        """Test noiseless data from the dictionary span is fitted exactly."""
        N = 64  # noqa: N806
        target = sample_besov_function(spiky, 1.0, 3, 11)
        data = generate_data(target, RegressionConfig(n=3 * N, sigma=0.0, seed=5))
        report = fit_adaptive_dictionary(data, spiky, N, F=10.0)
        assert report.residual <= 1e-8
        assert report.dictionary_size <= N
        assert report.clipped

    def test_clipping(self, spiky: SpaceParams) -> None:
        """Test the estimate never leaves [-F, F]."""
        data = generate_data(
            lambda x: 5.0 * sine(x), RegressionConfig(n=256, sigma=0.5, seed=3)
        )
        report = fit_adaptive_dictionary(data, spiky, 64, F=1.0)
        grid = np.linspace(0.0, 1.0, 2001).reshape(-1, 1)
        assert np.max(np.abs(report(grid))) <= 1.0

    def test_nested_residuals(self) -> None:
        """Test the training residual does not grow along nested dictionaries."""
        data = generate_data(sine, RegressionConfig(n=400, sigma=0.2, seed=6))
        residuals = []
        dictionary = []
        for level in range(5):
            dictionary = dictionary + level_indices((level,), 2, active=True)
            residuals.append(fit_dictionary(data, dictionary, 2, 1.0).residual)
        assert all(b <= a + 1e-12 for a, b in zip(residuals, residuals[1:]))

    def test_error_decreases_with_n(self, spiky: SpaceParams) -> None:
        """Test more data gives a smaller risk on a smooth target."""
        risks = []
        for n in (128, 2048):
            data = generate_data(sine, RegressionConfig(n=n, sigma=0.1, seed=0))
            N = max(8, round(n ** (1 / 3)) * 4)  # noqa: N806
            report = fit_adaptive_dictionary(data, spiky, N, F=2.0)
            risks.append(empirical_l2_risk(report, sine, 1).value)
        assert risks[1] < risks[0]

    def test_risk_falls_with_n_across_seeds(self) -> None:
        """Test the median risk on spike trains drops when n grows sixteenfold."""
        medians = []
        for n in (256, 4096):
            risks = []
            for seed in range(5):
                target = spike_train(max_level=10, seed=seed)
                data = generate_data(target, RegressionConfig(n=n, sigma=0.05, seed=seed))
                N = max(8, math.ceil(4 * n ** (1 / 3)))  # noqa: N806
                report = fit_adaptive_dictionary(data, target.space, N, F=1.0)
                risks.append(empirical_l2_risk(report, target, 1).value)
            medians.append(float(np.median(risks)))
        assert medians[1] < medians[0]

    def test_pilot_skips_thin_support(self, spiky: SpaceParams) -> None:
        """Test no tail atom is chosen whose support holds too few samples."""
        data = generate_data(sine, RegressionConfig(n=2048, sigma=0.1, seed=0))
        report = fit_adaptive_dictionary(data, spiky, 52, F=2.0)
        design = design_matrix(report.expansion.indices, 2, data.x).tocsc()
        assert np.min(np.diff(design.indptr)) >= MIN_SUPPORT_FACTOR * 3

    def test_report_json(self, spiky: SpaceParams) -> None:
        """Test the JSON report carries the expansion and the budget."""
        data = generate_data(sine, RegressionConfig(n=64, sigma=0.1, seed=0))
        document = fit_adaptive_dictionary(data, spiky, 32, F=2.0).to_dict()
        assert document["method"] == "adaptive"
        assert "budget" in document["theory"]
        assert document["expansion"]["m"] == 2

    def test_dimension_mismatch(self, spiky: SpaceParams) -> None:
        """Test data of the wrong dimension is rejected."""
        data = generate_data(sine, RegressionConfig(n=20, sigma=0.0, d=2))
        with pytest.raises(DimensionMismatchError):
            fit_adaptive_dictionary(data, spiky, 32, F=1.0)

    def test_empty_dictionary(self) -> None:
        """Test an empty dictionary is rejected."""
        data = generate_data(sine, RegressionConfig(n=20, sigma=0.0))
        with pytest.raises(ParameterError):
            fit_dictionary(data, [], 2, 1.0)

    def test_mixed(self) -> None:
        """Test the sparse grid dictionary in two dimensions."""
        params = SpaceParams(s=1.0, p=1.0, q=1.0, r=2.0, d=2, m=2, mixed=True)
        data = generate_data(
            lambda x: np.sin(np.pi * x[:, 0]) * x[:, 1], RegressionConfig(n=500, sigma=0.05, d=2)
        )
        report = fit_adaptive_dictionary(data, params, 150, F=2.0)
        assert report.dictionary_size <= 150
        assert report.residual < 0.05


class TestKernelRidge:
    """Tests for the kernel ridge baselines."""

    @pytest.mark.parametrize("kernel", ["gaussian", "spline"])
    def test_interpolation(self, kernel: str) -> None:
        """Test lambda = 0 interpolates a single point."""
        data = Dataset(np.array([[0.3]]), np.array([2.0]))
        assert float(fit_krr(data, kernel, 0.0)(np.array([[0.3]]))[0]) == pytest.approx(2.0)

    @pytest.mark.parametrize("kernel", ["gaussian", "spline"])
    def test_linearity(self, kernel: str) -> None:
        """Test fit(Y + Y') = fit(Y) + fit(Y') on a fixed design."""
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(50, 1))
        y1, y2 = rng.normal(size=50), rng.normal(size=50)
        grid = np.linspace(0.0, 1.0, 101).reshape(-1, 1)
        both = fit_krr(Dataset(x, y1 + y2), kernel, 1e-3)(grid)
        apart = fit_krr(Dataset(x, y1), kernel, 1e-3)(grid) + fit_krr(
            Dataset(x, y2), kernel, 1e-3
        )(grid)
        np.testing.assert_allclose(both, apart, atol=1e-9)

    def test_duplicates_singular(self) -> None:
        """Test interpolation with repeated inputs is rejected."""
        data = Dataset(np.array([[0.2], [0.2]]), np.array([1.0, 2.0]))
        with pytest.raises(SingularSystemError):
            fit_krr(data, "spline", 0.0)

    def test_invalid(self) -> None:
        """Test unknown kernels and negative ridge parameters."""
        data = Dataset(np.array([[0.2]]), np.array([1.0]))
        with pytest.raises(ParameterError):
            fit_krr(data, "laplace", 1.0)
        with pytest.raises(ParameterError):
            fit_krr(data, "gaussian", -1.0)

    def test_cross_validation(self) -> None:
        """Test CV picks a grid value and is deterministic."""
        data = generate_data(sine, RegressionConfig(n=120, sigma=0.1, seed=8))
        lambdas = [1e-4, 1e-2, 1.0]
        first = fit_krr_cv(data, "gaussian", lambdas=lambdas, seed=3)
        second = fit_krr_cv(data, "gaussian", lambdas=lambdas, seed=3)
        assert first.theory["lambda"] in lambdas
        assert first.theory == second.theory
        assert first.method == "krr_gaussian_cv"
        assert empirical_l2_risk(first, sine, 1).value < 0.05

    def test_cross_validation_spline(self) -> None:
        """Test the spline kernel has no bandwidth to tune."""
        data = generate_data(sine, RegressionConfig(n=60, sigma=0.1, seed=8))
        report = fit_krr_cv(data, "spline")
        assert report.theory["bandwidth"] is None
        assert report.theory["folds"] == 5


class TestRisk:
    """Tests for empirical_l2_risk."""

    def test_zero(self) -> None:
        """Test identical functions have zero risk."""
        assert empirical_l2_risk(sine, sine, 1).value == 0.0

    @pytest.mark.parametrize("d", [1, 2])
    def test_offset(self, d: int) -> None:
        """Test a constant offset c has risk c^2."""
        risk = empirical_l2_risk(lambda x: sine(x) + 0.3, sine, d)
        assert risk.value == pytest.approx(0.09, abs=1e-8)
        assert risk.method == "midpoint"

    def test_symmetric(self) -> None:
        """Test the risk is symmetric in its arguments."""
        other = lambda x: x[:, 0] ** 2  # noqa: E731
        assert empirical_l2_risk(sine, other, 1).value == empirical_l2_risk(other, sine, 1).value

    def test_monte_carlo_oracle(self) -> None:
        """Test quadrature against a 10^6-sample Monte Carlo estimate."""
        zero = lambda x: np.zeros(len(x))  # noqa: E731
        quadrature = empirical_l2_risk(sine, zero, 1)
        mc = empirical_l2_risk(sine, zero, 1, method="monte_carlo", samples=1_000_000, seed=2)
        assert quadrature.value == pytest.approx(0.5, abs=1e-10)
        assert abs(quadrature.value - mc.value) <= 3 * mc.stderr

    def test_high_dimension(self) -> None:
        """Test d >= 3 reports a Monte Carlo standard error."""
        risk = empirical_l2_risk(lambda x: x[:, 0], lambda x: np.zeros(len(x)), 3)
        assert risk.method == "monte_carlo"
        assert risk.stderr > 0
        assert float(risk) == pytest.approx(1.0 / 3.0, abs=5 * risk.stderr)

    def test_midpoint_limit(self) -> None:
        """Test the midpoint rule is refused for d >= 3."""
        with pytest.raises(ParameterError):
            empirical_l2_risk(sine, sine, 3, method="midpoint")


class TestTheory:
    """Tests for covering numbers and the risk bound."""

    def test_covering(self) -> None:
        """Test 2SL ln(delta^{-1} L (B v 1)(W + 1)) by substitution."""
        assert covering_number_bound(2, 3, 10, 1.0, 0.1) == pytest.approx(40 * math.log(80))
        assert covering_number_bound(2, 3, 10, 1.0, 1.0) == pytest.approx(40 * math.log(8))

    def test_covering_linear_in_s(self) -> None:
        """Test doubling S doubles the bound."""
        single = covering_number_bound(4, 20, 100, 7.0, 0.01)
        assert covering_number_bound(4, 20, 200, 7.0, 0.01) == pytest.approx(2 * single, rel=1e-15)

    @pytest.mark.parametrize(("L", "W", "S", "B"), [(2, 3, 10, 1.0), (5, 50, 1000, 20.0)])
    def test_tight_form(self, L: int, W: int, S: int, B: float) -> None:  # noqa: N803
        """Test the sharper form lies between bound/(2L) and the bound."""
        bound = covering_number_bound(L, W, S, B, 0.05)
        tight = covering_number_bound_tight(L, W, S, B, 0.05)
        assert bound / (2 * L) <= tight <= bound

    def test_covering_invalid(self) -> None:
        """Test delta outside (0, 1] is rejected."""
        with pytest.raises(ParameterError):
            covering_number_bound(2, 3, 10, 1.0, 0.0)

    def test_risk_zero_approximation(self) -> None:
        """Test the bracket with no approximation or covering term."""
        F, n, eps, delta = 2.0, 100, 0.5, 0.01  # noqa: N806
        expected = F**2 * -math.log(delta) / (n * eps) + delta * F**2
        assert risk_bound(0.0, 0.0, n, F, eps, delta) == pytest.approx(expected, rel=1e-12)

    def test_covering_term_scales(self) -> None:
        """Test the covering term divides by 10 when n grows tenfold."""
        small = risk_bound_terms(0.0, 30.0, 100, 1.0, 1.0, 1.0)
        large = risk_bound_terms(0.0, 30.0, 1000, 1.0, 1.0, 1.0)
        assert large["covering"] == pytest.approx(small["covering"] / 10, rel=1e-14)
        assert small["total"] == pytest.approx(small["prefactor"] * small["bracket"])
        assert small["prefactor"] == 4.0

    def test_bracket_minimizer(self) -> None:
        """Test the bracket at n = 2^12 is smallest near N = 2^4 with order n^{-2/3}."""
        n = 2**12
        sweep = {
            N: risk_bound(N**-2.0, float(N), n, 1.0, 1.0, 1.0 / n)
            for N in (2**k for k in range(1, 9))
        }
        best = min(sweep, key=sweep.__getitem__)
        assert best == 16
        assert sweep[best] <= 4 * n ** (-2 / 3)


class TestRateReference:
    """Tests for rate_reference."""

    def test_besov(self) -> None:
        """Test 4096^{-2/3} = 2^{-8}."""
        value, exponent = rate_reference(RateParams("besov", s=1.0, p=1.0, q=1.0, d=1), 4096)
        assert value == pytest.approx(0.00390625, rel=1e-9)
        assert exponent == pytest.approx(-2 / 3)

    def test_linear_lower(self) -> None:
        """Test v = 1 at p = 1 gives 4096^{-1/2}."""
        params = RateParams("linear_lower", s=1.0, p=1.0, q=1.0)
        assert params.v == 1.0
        value, exponent = rate_reference(params, 4096)
        assert value == pytest.approx(0.015625, rel=1e-9)
        assert exponent == pytest.approx(-0.5)

    @pytest.mark.parametrize("s", [0.5, 1.0, 3.0])
    def test_mixed_second_without_u(self, s: float) -> None:
        """Test u = 0 reduces the second mixed exponent to -2s/(2s + 1 + log2 e)."""
        params = RateParams("mixed_second", s=s, p=1.0, q=2.0, d=5)
        assert params.u == 0.0
        _, exponent = rate_reference(params, 1000)
        assert exponent == pytest.approx(-2 * s / (2 * s + 1 + math.log2(math.e)), rel=1e-9)

    def test_u_and_v(self) -> None:
        """Test the derived exponents u and v."""
        assert RateParams("mixed", s=1.0, p=2.0, q=2.0).u == 0.5
        assert RateParams("mixed", s=1.0, p=1.0, q="inf").u == 0.5
        assert RateParams("mixed", s=1.0, p=3.0, q=1.0).v == 0.0

    def test_mixed_log_factor(self) -> None:
        """Test the mixed rate carries a polylog factor only for d > 1."""
        one = rate_reference(RateParams("mixed", s=1.0, p=2.0, q=2.0, d=1), 1024)
        three = rate_reference(RateParams("mixed", s=1.0, p=2.0, q=2.0, d=3), 1024)
        assert one[1] == three[1] == pytest.approx(-2 / 3)
        assert three[0] > one[0]

    def test_approximation_families(self) -> None:
        """Test the adaptive and linear approximation exponents."""
        adaptive = rate_reference(RateParams("approx_adaptive", s=1.0, p=1.0, q=1.0), 256)
        linear = rate_reference(RateParams("approx_linear", s=1.0, p=1.0, q=1.0, r=2.0), 256)
        assert adaptive == (pytest.approx(1 / 256), pytest.approx(-1.0))
        assert linear[1] == pytest.approx(-0.5)

    def test_mismatch(self) -> None:
        """Test families that do not apply are rejected."""
        with pytest.raises(ParameterError):
            rate_reference(RateParams("linear_lower", s=1.0, p=1.0, q=1.0, d=2), 100)
        with pytest.raises(ParameterError):
            rate_reference(RateParams("mixed_second", s=0.1, p=2.0, q=2.0, d=2), 100)
        with pytest.raises(ValueError):
            RateParams("unknown", s=1.0, p=1.0, q=1.0)
