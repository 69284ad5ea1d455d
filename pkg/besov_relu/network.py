"""Sparse ReLU networks: layers, evaluation, size accounting and combinators."""

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import sparse

from besov_relu.exceptions import DimensionMismatchError, NonFiniteError, ParameterError
from besov_relu.models import BudgetDict, LayerDict, NetworkDict

logger = logging.getLogger(__name__)


class Junction(str, Enum):
    """How two networks are joined in serial composition.

    Attributes:
        EXACT: Pass outputs through the exact pair x = relu(x) - relu(-x).
        RELU: Pass outputs through a plain ReLU; valid when they are nonnegative.
        FUSED: Merge the two affine maps into one layer.
    """

    EXACT = "exact"
    RELU = "relu"
    FUSED = "fused"


class CombineMode(str, Enum):
    """Serial or parallel composition."""

    SERIAL = "serial"
    PARALLEL = "parallel"


def _canonical(matrix: sparse.spmatrix) -> sparse.csr_matrix:
    csr = sparse.csr_matrix(matrix, dtype=np.float64)
    csr.sum_duplicates()
    csr.eliminate_zeros()
    csr.sort_indices()
    return csr


class AffineLayer:
    """One affine map z = W x + b with sparse W.

    Attributes:
        weights: CSR matrix of shape (out_dim, in_dim), canonical and zero-free.
        bias: Bias vector of length out_dim.

    Raises:
        DimensionMismatchError: If bias and weights disagree.
        NonFiniteError: If a stored value is not finite.
    """

    __slots__ = ("_weights", "_bias")

    def __init__(self, weights: sparse.spmatrix | ArrayLike, bias: ArrayLike | None = None) -> None:
        """Initialize an AffineLayer from a sparse or dense weight matrix."""
        if sparse.issparse(weights):
            matrix = _canonical(weights)
        else:
            dense = np.atleast_2d(np.asarray(weights, dtype=np.float64))
            matrix = _canonical(sparse.csr_matrix(dense))
        out_dim = matrix.shape[0]
        vector = (
            np.zeros(out_dim, dtype=np.float64)
            if bias is None
            else np.asarray(bias, dtype=np.float64).reshape(-1)
        )
        if vector.shape[0] != out_dim:
            raise DimensionMismatchError("bias", out_dim, vector.shape[0])
        if not (np.all(np.isfinite(matrix.data)) and np.all(np.isfinite(vector))):
            raise NonFiniteError("layer parameters")
        vector.setflags(write=False)
        self._weights = matrix
        self._bias = vector

    @classmethod
    def from_triplets(
        cls,
        out_dim: int,
        in_dim: int,
        triplets: Iterable[Sequence[float]],
        bias: ArrayLike | None = None,
    ) -> "AffineLayer":
        """Build a layer from (row, col, value) triplets.

        Raises:
            ParameterError: If a triplet is out of range or a cell repeats.
        """
        rows: list[int] = []
        cols: list[int] = []
        values: list[float] = []
        seen: set[tuple[int, int]] = set()
        for row, col, value in triplets:
            r, c = int(row), int(col)
            if not (0 <= r < out_dim and 0 <= c < in_dim):
                raise ParameterError(f"Triplet ({r}, {c}) outside {out_dim}x{in_dim}")
            if (r, c) in seen:
                raise ParameterError(f"Duplicate triplet at ({r}, {c})")
            seen.add((r, c))
            rows.append(r)
            cols.append(c)
            values.append(float(value))
        matrix = sparse.coo_matrix((values, (rows, cols)), shape=(out_dim, in_dim))
        return cls(matrix, bias)

    @property
    def weights(self) -> sparse.csr_matrix:
        """Return the weight matrix."""
        return self._weights

    @property
    def bias(self) -> NDArray[np.float64]:
        """Return the read-only bias vector."""
        return self._bias

    @property
    def in_dim(self) -> int:
        """Return the input dimension."""
        return int(self._weights.shape[1])

    @property
    def out_dim(self) -> int:
        """Return the output dimension."""
        return int(self._weights.shape[0])

    @property
    def nonzeros(self) -> int:
        """Return nnz(W) + nnz(b)."""
        return int(self._weights.nnz + np.count_nonzero(self._bias))

    @property
    def magnitude(self) -> float:
        """Return the largest absolute parameter."""
        peak_w = float(np.max(np.abs(self._weights.data))) if self._weights.nnz else 0.0
        peak_b = float(np.max(np.abs(self._bias))) if self._bias.size else 0.0
        return max(peak_w, peak_b)

    def apply(self, h: NDArray[np.float64]) -> NDArray[np.float64]:
        """Apply the affine map to a batch of shape (n, in_dim)."""
        return np.asarray((self._weights @ h.T).T, dtype=np.float64) + self._bias

    def triplets(self) -> list[list[float]]:
        """Return [row, col, value] triplets in row-major order."""
        coo = self._weights.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [[int(coo.row[i]), int(coo.col[i]), float(coo.data[i])] for i in order]

    def to_dict(self) -> LayerDict:
        """Return the JSON form of the layer."""
        return {
            "in": self.in_dim,
            "out": self.out_dim,
            "w": self.triplets(),
            "b": [float(v) for v in self._bias],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AffineLayer":
        """Build a layer from its JSON form."""
        try:
            return cls.from_triplets(int(data["out"]), int(data["in"]), data["w"], data["b"])
        except KeyError as e:
            raise ParameterError(f"Layer document misses field {e.args[0]!r}") from e

    def __repr__(self) -> str:
        """Return string representation."""
        return f"AffineLayer(in={self.in_dim}, out={self.out_dim}, nnz={self._weights.nnz})"


@dataclass(frozen=True)
class SizeReport:
    """The (L, W, S, B) size of a network.

    Attributes:
        depth: Number of affine layers L.
        width: Largest layer dimension W, network input and output included.
        nonzeros: Nonzero weights plus nonzero biases S.
        magnitude: Largest absolute parameter B.
    """

    depth: int
    width: int
    nonzeros: int
    magnitude: float

    def within(self, L: int, W: int, S: int, B: float) -> bool:  # noqa: N803
        """Check componentwise membership in the class with bounds (L, W, S, B)."""
        return (
            self.depth <= L
            and self.width <= W
            and self.nonzeros <= S
            and self.magnitude <= B
        )

    def to_dict(self) -> BudgetDict:
        """Return the report as {L, W, S, B}."""
        return {"L": self.depth, "W": self.width, "S": self.nonzeros, "B": self.magnitude}


class SparseNetwork:
    """A feedforward network of AffineLayers with ReLU between consecutive layers.

    No activation follows the last layer.

    Example:
        >>> net = identity_network(2)
        >>> net.evaluate([1.0, -2.0]).tolist()
        [1.0, -2.0]
    """

    __slots__ = ("_layers",)

    def __init__(self, layers: Sequence[AffineLayer]) -> None:
        """Initialize a SparseNetwork.

        Raises:
            ParameterError: If no layers are given.
            DimensionMismatchError: If adjacent layers do not chain.
        """
        if not layers:
            raise ParameterError("A network needs at least one layer")
        for pos in range(1, len(layers)):
            if layers[pos].in_dim != layers[pos - 1].out_dim:
                raise DimensionMismatchError(
                    f"layer {pos + 1} input", layers[pos - 1].out_dim, layers[pos].in_dim
                )
        self._layers = tuple(layers)

    @property
    def layers(self) -> tuple[AffineLayer, ...]:
        """Return the layers."""
        return self._layers

    @property
    def in_dim(self) -> int:
        """Return the input dimension."""
        return self._layers[0].in_dim

    @property
    def out_dim(self) -> int:
        """Return the output dimension."""
        return self._layers[-1].out_dim

    @property
    def depth(self) -> int:
        """Return the number of affine layers."""
        return len(self._layers)

    def __len__(self) -> int:
        return len(self._layers)

    def __repr__(self) -> str:
        """Return string representation."""
        return f"SparseNetwork(in={self.in_dim}, out={self.out_dim}, depth={self.depth})"

    def evaluate(self, x: ArrayLike) -> NDArray[np.float64]:
        """Run the forward pass on one input vector or an (n, in_dim) batch.

        Raises:
            DimensionMismatchError: If the input has the wrong dimension.
            NonFiniteError: If an intermediate value is not finite.
        """
        h = np.asarray(x, dtype=np.float64)
        single = h.ndim == 1
        h = np.atleast_2d(h)
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise DimensionMismatchError("input", self.in_dim, h.shape[-1])
        if not np.all(np.isfinite(h)):
            raise NonFiniteError("network input")
        last = len(self._layers) - 1
        for pos, layer in enumerate(self._layers):
            h = layer.apply(h)
            if not np.all(np.isfinite(h)):
                raise NonFiniteError(f"layer {pos + 1}")
            if pos < last:
                h = np.maximum(h, 0.0)
        return h[0] if single else h

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        """Alias of ``evaluate``."""
        return self.evaluate(x)

    def size_report(self) -> SizeReport:
        """Compute (L, W, S, B) from the stored layers."""
        width = max(max(layer.in_dim, layer.out_dim) for layer in self._layers)
        return SizeReport(
            depth=len(self._layers),
            width=width,
            nonzeros=sum(layer.nonzeros for layer in self._layers),
            magnitude=max(layer.magnitude for layer in self._layers),
        )

    def row_sum_bound(self) -> float:
        """Return the largest absolute row sum over all weight matrices."""
        return max(
            float(np.max(np.asarray(abs(layer.weights).sum(axis=1)), initial=0.0))
            for layer in self._layers
        )

    def scaled(self, factor: float) -> "SparseNetwork":
        """Return the network whose output is multiplied by ``factor``."""
        last = self._layers[-1]
        scaled_last = AffineLayer(last.weights * float(factor), last.bias * float(factor))
        return SparseNetwork(self._layers[:-1] + (scaled_last,))

    def to_dict(self) -> NetworkDict:
        """Return the JSON form of the network."""
        return {"layers": [layer.to_dict() for layer in self._layers]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SparseNetwork":
        """Build a network from its JSON form."""
        if "layers" not in data:
            raise ParameterError("Network document misses field 'layers'")
        return cls([AffineLayer.from_dict(layer) for layer in data["layers"]])

    def to_json(self, **kwargs: Any) -> str:
        """Serialize to a JSON string."""
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "SparseNetwork":
        """Parse a network from a JSON string."""
        return cls.from_dict(json.loads(text))


def linear_network(
    weights: sparse.spmatrix | ArrayLike, bias: ArrayLike | None = None
) -> SparseNetwork:
    """Return the one-layer network x -> W x + b."""
    return SparseNetwork([AffineLayer(weights, bias)])


def identity_network(dim: int) -> SparseNetwork:
    """Return the one-layer identity network on ``dim`` inputs."""
    return linear_network(sparse.identity(dim, format="csr"))


def _doubled(layer: AffineLayer) -> AffineLayer:
    """Return the layer emitting (z, -z) for its output z."""
    return AffineLayer(
        sparse.vstack([layer.weights, -layer.weights]), np.concatenate([layer.bias, -layer.bias])
    )


def pad_depth(net: SparseNetwork, depth: int, nonnegative: bool = False) -> SparseNetwork:
    """Extend ``net`` to ``depth`` layers without changing the function it computes.

    With ``nonnegative`` the outputs are assumed nonnegative and carried by
    plain identity layers. Otherwise the last layer emits (z, -z), the
    rectified pair is carried, and a final layer returns relu(z) - relu(-z).

    Raises:
        ParameterError: If ``depth`` is below the current depth.
    """
    extra = depth - net.depth
    if extra < 0:
        raise ParameterError(f"Cannot pad depth {net.depth} down to {depth}")
    if extra == 0:
        return net
    k = net.out_dim
    if nonnegative:
        eye = AffineLayer(sparse.identity(k, format="csr"))
        return SparseNetwork(net.layers + (eye,) * extra)
    pair_eye = AffineLayer(sparse.identity(2 * k, format="csr"))
    recombine = AffineLayer(sparse.hstack([sparse.identity(k), -sparse.identity(k)]))
    layers = net.layers[:-1] + (_doubled(net.layers[-1]),)
    layers += (pair_eye,) * (extra - 1) + (recombine,)
    return SparseNetwork(layers)


def _serial(a: SparseNetwork, b: SparseNetwork, junction: Junction) -> SparseNetwork:
    if a.out_dim != b.in_dim:
        raise DimensionMismatchError("serial input", a.out_dim, b.in_dim)
    last, first = a.layers[-1], b.layers[0]
    if junction is Junction.FUSED:
        merged = AffineLayer(first.weights @ last.weights, first.weights @ last.bias + first.bias)
        return SparseNetwork(a.layers[:-1] + (merged,) + b.layers[1:])
    if junction is Junction.RELU:
        return SparseNetwork(a.layers + b.layers)
    split = AffineLayer(sparse.hstack([first.weights, -first.weights]), first.bias)
    return SparseNetwork(a.layers[:-1] + (_doubled(last), split) + b.layers[1:])


def parallel_all(nets: Sequence[SparseNetwork], nonnegative: bool = False) -> SparseNetwork:
    """Stack networks side by side on concatenated inputs.

    Shallower networks are padded with ``pad_depth``.

    Raises:
        ParameterError: If no networks are given.
    """
    if not nets:
        raise ParameterError("parallel_all needs at least one network")
    depth = max(net.depth for net in nets)
    padded = [pad_depth(net, depth, nonnegative) for net in nets]
    layers = []
    for pos in range(depth):
        blocks = [net.layers[pos] for net in padded]
        layers.append(
            AffineLayer(
                sparse.block_diag([layer.weights for layer in blocks], format="csr"),
                np.concatenate([layer.bias for layer in blocks]),
            )
        )
    return SparseNetwork(layers)


def combine(
    a: SparseNetwork,
    b: SparseNetwork,
    mode: CombineMode | str = CombineMode.SERIAL,
    junction: Junction | str = Junction.EXACT,
    nonnegative: bool = False,
) -> SparseNetwork:
    """Compose two networks.

    Serial mode computes b(a(x)) and joins them at ``junction``. Parallel mode
    maps (x_a, x_b) to (a(x_a), b(x_b)); ``nonnegative`` selects the cheaper
    depth padding when both outputs are known to be nonnegative.

    Sizes of a serial result:

    - ``relu``: L = a.L + b.L and S <= a.S + b.S, the layers are concatenated.
    - ``exact``: L = a.L + b.L and S <= a.S + b.S + nonzeros of a's last layer
      + nnz of b's first weights; both junction layers are doubled.
    - ``fused``: L = a.L + b.L - 1.

    Example:
        >>> clip = build_clip(1.0)  # doctest: +SKIP
        >>> combine(clip, clip).evaluate([2.0])  # doctest: +SKIP
        array([1.])
    """
    if CombineMode(mode) is CombineMode.PARALLEL:
        return parallel_all([a, b], nonnegative)
    return _serial(a, b, Junction(junction))


def chain(
    nets: Sequence[SparseNetwork], junction: Junction | str = Junction.EXACT
) -> SparseNetwork:
    """Compose networks left to right with the same junction."""
    if not nets:
        raise ParameterError("chain needs at least one network")
    result = nets[0]
    for net in nets[1:]:
        result = _serial(result, net, Junction(junction))
    return result
