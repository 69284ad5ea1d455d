"""Tests for sparse ReLU networks and their combinators."""

import numpy as np
import pytest
from scipy import sparse

from besov_relu.compiler import build_clip
from besov_relu.exceptions import DimensionMismatchError, NonFiniteError, ParameterError
from besov_relu.network import (
    AffineLayer,
    CombineMode,
    Junction,
    SparseNetwork,
    chain,
    combine,
    identity_network,
    linear_network,
    pad_depth,
    parallel_all,
)


def random_network(
    rng: np.random.Generator, sizes: list[int], density: float = 0.6
) -> SparseNetwork:
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights = sparse.random(fan_out, fan_in, density=density, random_state=rng, format="csr")
        weights.data = weights.data * 2.0 - 1.0
        layers.append(AffineLayer(weights, rng.uniform(-0.5, 0.5, size=fan_out)))
    return SparseNetwork(layers)


class TestAffineLayer:
    """Tests for AffineLayer validation."""

    def test_from_triplets(self) -> None:
        """Test building a layer from triplets."""
        layer = AffineLayer.from_triplets(2, 3, [(0, 2, 1.5), (1, 0, -1.0)], [0.0, 2.0])
        assert layer.in_dim == 3
        assert layer.out_dim == 2
        np.testing.assert_array_equal(layer.weights.toarray(), [[0, 0, 1.5], [-1, 0, 0]])

    def test_triplet_out_of_range(self) -> None:
        """Test a triplet outside the matrix is rejected."""
        with pytest.raises(ParameterError):
            AffineLayer.from_triplets(2, 2, [(2, 0, 1.0)])

    def test_duplicate_triplet(self) -> None:
        """Test a repeated cell is rejected."""
        with pytest.raises(ParameterError):
            AffineLayer.from_triplets(2, 2, [(0, 0, 1.0), (0, 0, 2.0)])

    def test_non_finite(self) -> None:
        """Test non-finite parameters are rejected."""
        with pytest.raises(NonFiniteError):
            AffineLayer([[np.inf]])
        with pytest.raises(NonFiniteError):
            AffineLayer([[1.0]], [np.nan])

    def test_bias_dimension(self) -> None:
        """Test a bias of the wrong length is rejected."""
        with pytest.raises(DimensionMismatchError):
            AffineLayer([[1.0, 0.0]], [0.0, 0.0])

    def test_explicit_zeros_dropped(self) -> None:
        """Test stored zeros do not count as nonzeros."""
        layer = AffineLayer([[1.0, 0.0], [0.0, 0.0]])
        assert layer.nonzeros == 1


class TestEvaluate:
    """Tests for SparseNetwork.evaluate."""

    def test_identity(self) -> None:
        """Test a single identity layer."""
        np.testing.assert_array_equal(identity_network(2).evaluate([1.0, -2.0]), [1.0, -2.0])

    def test_relu_between_layers(self) -> None:
        """Test the ReLU between two identity layers kills negatives."""
        net = SparseNetwork(identity_network(1).layers * 2)
        np.testing.assert_array_equal(net.evaluate([-3.0]), [0.0])

    def test_clip_gadget(self) -> None:
        """Test relu(x) - relu(x - 1) at 0.4."""
        assert float(build_clip(1.0).evaluate([0.4])[0]) == pytest.approx(0.4, abs=0.0)

    def test_batch(self) -> None:
        """Test batch evaluation matches row-wise evaluation."""
        rng = np.random.default_rng(0)
        net = random_network(rng, [3, 5, 4, 2])
        x = rng.normal(size=(20, 3))
        batch = net.evaluate(x)
        assert batch.shape == (20, 2)
        for row, out in zip(x, batch):
            np.testing.assert_array_equal(net.evaluate(row), out)

    def test_dimension_mismatch(self) -> None:
        """Test an input of the wrong dimension is rejected."""
        with pytest.raises(DimensionMismatchError):
            identity_network(2).evaluate([1.0, 2.0, 3.0])

    def test_non_finite_intermediate(self) -> None:
        """Test overflow inside the network is reported."""
        big = SparseNetwork([AffineLayer([[1e300]]), AffineLayer([[1e300]])])
        with pytest.raises(NonFiniteError) as exc_info:
            big.evaluate([1e10])
        assert "layer 1" in str(exc_info.value)

    def test_chain_rejects_mismatched_layers(self) -> None:
        """Test layers that do not chain are rejected."""
        with pytest.raises(DimensionMismatchError):
            SparseNetwork([AffineLayer(np.ones((2, 1))), AffineLayer(np.ones((1, 3)))])

    def test_lipschitz_bound(self) -> None:
        """Test |f(x) - f(y)| <= (max row sum)^L |x - y| on random points."""
        rng = np.random.default_rng(4)
        net = random_network(rng, [3, 6, 6, 2])
        factor = net.row_sum_bound() ** net.depth
        x = rng.uniform(-1, 1, size=(200, 3))
        y = x + rng.uniform(-0.1, 0.1, size=(200, 3))
        lhs = np.max(np.abs(net.evaluate(x) - net.evaluate(y)), axis=1)
        rhs = factor * np.max(np.abs(x - y), axis=1)
        assert np.all(lhs <= rhs + 1e-12)


class TestSizeReport:
    """Tests for size accounting."""

    def test_dense_layer(self) -> None:
        """Test a dense 2x2 layer of ones."""
        report = linear_network(np.ones((2, 2))).size_report()
        assert (report.depth, report.width, report.nonzeros, report.magnitude) == (1, 2, 4, 1.0)

    def test_clip_gadget(self) -> None:
        """Test the clip gadget counts its nonzero bias."""
        report = build_clip(1.0).size_report()
        assert (report.depth, report.width, report.magnitude) == (2, 2, 1.0)
        assert report.nonzeros == 5

    def test_scaled(self) -> None:
        """Test scaling changes the magnitude only."""
        net = identity_network(3)
        report = net.scaled(10.0).size_report()
        assert report.magnitude == 10.0
        assert report.nonzeros == net.size_report().nonzeros

    def test_within(self) -> None:
        """Test membership is componentwise."""
        report = linear_network(np.ones((2, 2))).size_report()
        assert report.within(1, 2, 4, 1.0)
        assert not report.within(1, 2, 3, 1.0)
        assert report.to_dict() == {"L": 1, "W": 2, "S": 4, "B": 1.0}


class TestCombine:
    """Tests for serial and parallel composition."""

    @pytest.fixture
    def rng(self) -> np.random.Generator:
        """Fixture for a seeded generator."""
        return np.random.default_rng(11)

    def test_serial_identity(self, rng: np.random.Generator) -> None:
        """Test composing with an identity keeps the function."""
        f = random_network(rng, [2, 4, 3])
        composed = combine(f, identity_network(3))
        x = rng.normal(size=(100, 2))
        np.testing.assert_allclose(composed.evaluate(x), f.evaluate(x), atol=1e-13)

    @pytest.mark.parametrize("junction", [Junction.EXACT, Junction.FUSED])
    def test_serial_composition(self, rng: np.random.Generator, junction: Junction) -> None:
        """Test serial composition equals b after a."""
        a = random_network(rng, [2, 4, 3])
        b = random_network(rng, [3, 5, 2])
        composed = combine(a, b, CombineMode.SERIAL, junction)
        x = rng.normal(size=(100, 2))
        np.testing.assert_allclose(composed.evaluate(x), b.evaluate(a.evaluate(x)), atol=1e-12)

    def test_serial_sizes(self, rng: np.random.Generator) -> None:
        """Test depth and sparsity of the junctions."""
        a = random_network(rng, [2, 4, 3])
        b = random_network(rng, [3, 5, 2])
        ra, rb = a.size_report(), b.size_report()
        relu = combine(a, b, junction=Junction.RELU).size_report()
        assert relu.depth == ra.depth + rb.depth
        assert relu.nonzeros <= ra.nonzeros + rb.nonzeros
        exact = combine(a, b, junction=Junction.EXACT).size_report()
        assert exact.depth == ra.depth + rb.depth
        overhead = a.layers[-1].nonzeros + b.layers[0].weights.nnz
        assert exact.nonzeros <= ra.nonzeros + rb.nonzeros + overhead
        assert combine(a, b, junction=Junction.FUSED).depth == ra.depth + rb.depth - 1

    def test_junction_sparsity_pinned(self) -> None:
        """Test the exact pair doubles both junction layers while relu does not."""
        a = linear_network([[2.0]], [1.0])
        b = linear_network([[3.0]])
        assert a.size_report().nonzeros + b.size_report().nonzeros == 3
        relu = combine(a, b, junction=Junction.RELU).size_report()
        assert (relu.depth, relu.nonzeros) == (2, 3)
        exact = combine(a, b, junction=Junction.EXACT)
        assert (exact.depth, exact.size_report().nonzeros) == (2, 6)
        x = np.linspace(-2.0, 2.0, 9).reshape(-1, 1)
        np.testing.assert_allclose(exact.evaluate(x), 3.0 * (2.0 * x + 1.0), atol=1e-14)


    def test_associativity(self, rng: np.random.Generator) -> None:
        """Test (a then b) then c equals a then (b then c)."""
        a = random_network(rng, [2, 3, 3])
        b = random_network(rng, [3, 4, 3])
        c = random_network(rng, [3, 2, 1])
        left = combine(combine(a, b), c)
        right = combine(a, combine(b, c))
        x = rng.normal(size=(100, 2))
        np.testing.assert_allclose(left.evaluate(x), right.evaluate(x), atol=1e-12)

    def test_parallel(self, rng: np.random.Generator) -> None:
        """Test parallel composition on concatenated inputs."""
        f = random_network(rng, [2, 4, 1])
        g = random_network(rng, [3, 2, 2])
        both = combine(f, g, "parallel")
        x = rng.normal(size=(100, 5))
        expected = np.hstack([f.evaluate(x[:, :2]), g.evaluate(x[:, 2:])])
        np.testing.assert_allclose(both.evaluate(x), expected, atol=1e-13)

    def test_parallel_pads_shallower(self, rng: np.random.Generator) -> None:
        """Test the shallower network is padded with exact identity pairs."""
        f = random_network(rng, [2, 3, 3, 3, 1])
        g = random_network(rng, [1, 2])
        both = combine(f, g, CombineMode.PARALLEL)
        assert both.depth == f.depth
        x = rng.normal(size=(100, 3))
        expected = np.hstack([f.evaluate(x[:, :2]), g.evaluate(x[:, 2:])])
        np.testing.assert_allclose(both.evaluate(x), expected, atol=1e-13)

    def test_clip_idempotent(self) -> None:
        """Test clip after clip equals clip on [-1, 2]."""
        clip = build_clip(1.0)
        twice = combine(clip, clip)
        x = np.linspace(-1.0, 2.0, 301).reshape(-1, 1)
        np.testing.assert_array_equal(twice.evaluate(x), clip.evaluate(x))

    def test_serial_dimension_mismatch(self, rng: np.random.Generator) -> None:
        """Test incompatible serial dimensions are rejected."""
        with pytest.raises(DimensionMismatchError):
            combine(random_network(rng, [2, 3]), random_network(rng, [2, 1]))

    def test_pad_depth(self, rng: np.random.Generator) -> None:
        """Test padding keeps the function for both carriers."""
        f = random_network(rng, [2, 3, 2])
        x = rng.normal(size=(50, 2))
        np.testing.assert_allclose(pad_depth(f, 5).evaluate(x), f.evaluate(x), atol=1e-13)
        clip = build_clip(1.0)
        y = np.linspace(-1, 2, 31).reshape(-1, 1)
        padded = pad_depth(clip, 4, nonnegative=True)
        assert padded.depth == 4
        np.testing.assert_array_equal(padded.evaluate(y), clip.evaluate(y))
        with pytest.raises(ParameterError):
            pad_depth(f, 1)

    def test_parallel_all_empty(self) -> None:
        """Test parallel_all needs a network."""
        with pytest.raises(ParameterError):
            parallel_all([])

    def test_chain(self, rng: np.random.Generator) -> None:
        """Test chain composes left to right."""
        a = random_network(rng, [2, 2])
        b = random_network(rng, [2, 3])
        x = rng.normal(size=(10, 2))
        np.testing.assert_allclose(
            chain([a, b], Junction.FUSED).evaluate(x), b.evaluate(a.evaluate(x)), atol=1e-13
        )


class TestSerialization:
    """Tests for the network JSON format."""

    def test_round_trip_bit_exact(self) -> None:
        """Test serialize then deserialize evaluates bit-exactly."""
        rng = np.random.default_rng(8)
        net = random_network(rng, [3, 7, 5, 2])
        restored = SparseNetwork.from_json(net.to_json())
        x = rng.normal(size=(64, 3))
        np.testing.assert_array_equal(restored.evaluate(x), net.evaluate(x))
        assert restored.size_report() == net.size_report()

    def test_layer_fields(self) -> None:
        """Test the layer document fields."""
        document = build_clip(2.0).to_dict()
        first = document["layers"][0]
        assert first["in"] == 1
        assert first["out"] == 2
        assert first["w"] == [[0, 0, 1.0], [1, 0, 1.0]]
        assert first["b"] == [0.0, -2.0]

    def test_missing_layers(self) -> None:
        """Test a document without layers is rejected."""
        with pytest.raises(ParameterError):
            SparseNetwork.from_dict({})
