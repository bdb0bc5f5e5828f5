"""The graph-convolutional autoencoder and its three decoding heads.

Encoder: stacked Chebyshev graph convolutions (recursion Z1 = X, Z2 = Lhat X,
Zk = 2 Lhat Z_{k-1} - Z_{k-2}; output sum_k Zk Theta_k + bias), relu between
hidden layers, linear final layer. Decoders: inner-product adjacency
(sigmoid of the cell Gram matrix), a fully connected count head producing
dropout/mean/dispersion matrices, and a Student-t soft assignment against
trainable cluster centers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .cellgraph import CellGraph
from .numerics import Tensor

ZINB_HIDDEN_DIMS = (128, 256, 512)

PI_CLAMP = (1e-10, 1.0 - 1e-10)
RATE_CLAMP = (1e-10, 1e10)


class NonFiniteOutputError(RuntimeError):
    pass


@dataclass
class ChebLayerParams:
    theta: list[Tensor]  # K matrices, each (in_dim, out_dim)
    bias: Tensor  # (out_dim,)

    @property
    def order(self) -> int:
        return len(self.theta)

    def __post_init__(self):
        if not self.theta:
            raise ValueError("a Chebyshev layer needs at least one weight matrix")
        shapes = {t.shape for t in self.theta}
        if len(shapes) != 1:
            raise ValueError(f"theta matrices disagree on shape: {sorted(shapes)}")


@dataclass
class ModelParams:
    encoder_layers: list[ChebLayerParams]
    zinb_fc: list[tuple[Tensor, Tensor]]  # (weight, bias) chain latent -> 128 -> 256 -> 512
    head_pi: Tensor  # (512, n_genes)
    head_mu: Tensor
    head_theta: Tensor
    cluster_centers: Tensor | None = None  # (n_clusters, latent_dim)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named: list[tuple[str, Tensor]] = []
        for i, layer in enumerate(self.encoder_layers):
            for k, theta in enumerate(layer.theta):
                named.append((f"enc{i}.theta{k}", theta))
            named.append((f"enc{i}.bias", layer.bias))
        for i, (w, b) in enumerate(self.zinb_fc):
            named.append((f"zinb_fc{i}.weight", w))
            named.append((f"zinb_fc{i}.bias", b))
        named.append(("head_pi.weight", self.head_pi))
        named.append(("head_mu.weight", self.head_mu))
        named.append(("head_theta.weight", self.head_theta))
        if self.cluster_centers is not None:
            named.append(("cluster_centers", self.cluster_centers))
        return named

    def with_centers(self, centers: np.ndarray) -> "ModelParams":
        return replace(self, cluster_centers=Tensor(centers, requires_grad=True))


@dataclass
class ZinbParams:
    pi: Tensor  # (n_cells, n_genes) in (0, 1)
    mu: Tensor  # positive
    theta: Tensor  # positive


@dataclass
class SoftAssignment:
    q: Tensor  # (n_cells, n_clusters), rows sum to 1

    @property
    def values(self) -> np.ndarray:
        return self.q.values


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(
    n_genes: int,
    latent_dim: int = 32,
    hidden_dim: int = 256,
    cheb_order: int = 3,
    zinb_dims: tuple[int, ...] = ZINB_HIDDEN_DIMS,
    seed: int = 0,
) -> ModelParams:
    """Uniform Glorot weights, zero biases, fixed draw order for the seed."""
    rng = np.random.default_rng(seed)
    layers = []
    for in_dim, out_dim in ((n_genes, hidden_dim), (hidden_dim, latent_dim)):
        theta = [
            Tensor(_glorot(rng, in_dim, out_dim), requires_grad=True)
            for _ in range(cheb_order)
        ]
        bias = Tensor(np.zeros(out_dim), requires_grad=True)
        layers.append(ChebLayerParams(theta=theta, bias=bias))
    fc = []
    in_dim = latent_dim
    for out_dim in zinb_dims:
        fc.append(
            (
                Tensor(_glorot(rng, in_dim, out_dim), requires_grad=True),
                Tensor(np.zeros(out_dim), requires_grad=True),
            )
        )
        in_dim = out_dim
    return ModelParams(
        encoder_layers=layers,
        zinb_fc=fc,
        head_pi=Tensor(_glorot(rng, in_dim, n_genes), requires_grad=True),
        head_mu=Tensor(_glorot(rng, in_dim, n_genes), requires_grad=True),
        head_theta=Tensor(_glorot(rng, in_dim, n_genes), requires_grad=True),
    )


def chebconv_forward(x: Tensor, graph: CellGraph, layer: ChebLayerParams) -> Tensor:
    x = nm.as_tensor(x)
    if x.shape[0] != graph.n:
        raise nm.ShapeMismatchError(
            f"chebconv: input has {x.shape[0]} rows for a graph of {graph.n} nodes"
        )
    if x.shape[1] != layer.theta[0].shape[0]:
        raise nm.ShapeMismatchError(
            f"chebconv: input width {x.shape[1]} vs weight fan-in {layer.theta[0].shape[0]}"
        )
    lhat = graph.scaled_laplacian
    z_prev_prev = x
    out = x @ layer.theta[0]
    if layer.order >= 2:
        z_prev = nm.const_matmul(lhat, x)
        out = out + z_prev @ layer.theta[1]
        for k in range(2, layer.order):
            z_next = 2.0 * nm.const_matmul(lhat, z_prev) - z_prev_prev
            out = out + z_next @ layer.theta[k]
            z_prev_prev, z_prev = z_prev, z_next
    return out + layer.bias


def encode(normalized, graph: CellGraph, params: ModelParams) -> Tensor:
    """Stacked convolutions, relu between hidden layers, linear final layer."""
    h = nm.as_tensor(normalized)
    last = len(params.encoder_layers) - 1
    for i, layer in enumerate(params.encoder_layers):
        h = chebconv_forward(h, graph, layer)
        if i != last:
            h = nm.relu(h)
    return h


def decode_adjacency(z: Tensor) -> Tensor:
    """Entrywise sigmoid of the cell Gram matrix; symmetric by construction."""
    z = nm.as_tensor(z)
    return nm.sigmoid(z @ z.T)


def decode_zinb(z: Tensor, params: ModelParams) -> ZinbParams:
    h = nm.as_tensor(z)
    for w, b in params.zinb_fc:
        h = nm.relu(h @ w + b)
    pi = nm.clip(nm.sigmoid(h @ params.head_pi), *PI_CLAMP)
    mu = nm.clip(nm.exp(h @ params.head_mu), *RATE_CLAMP)  # overflow lands on the clamp
    theta = nm.clip(nm.exp(h @ params.head_theta), *RATE_CLAMP)
    for name, t in (("pi", pi), ("mu", mu), ("theta", theta)):
        if not np.all(np.isfinite(t.values)):
            raise NonFiniteOutputError(f"non-finite values in the {name} head")
    return ZinbParams(pi=pi, mu=mu, theta=theta)


def soft_assign(z: Tensor, centers: Tensor) -> SoftAssignment:
    """Student-t kernel (one degree of freedom) against the centers,
    row-normalized."""
    z = nm.as_tensor(z)
    centers = nm.as_tensor(centers)
    if z.shape[1] != centers.shape[1]:
        raise nm.ShapeMismatchError(
            f"soft_assign: latent dim {z.shape[1]} vs center dim {centers.shape[1]}"
        )
    z_sq = (z * z).sum(axis=1, keepdims=True)  # (n, 1)
    c_sq = (centers * centers).sum(axis=1, keepdims=True).T  # (1, K)
    cross = z @ centers.T
    sq_dist = z_sq + c_sq - 2.0 * cross
    kernel = 1.0 / (1.0 + sq_dist)
    q = kernel / kernel.sum(axis=1, keepdims=True)
    return SoftAssignment(q=q)
