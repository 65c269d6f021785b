"""Sampled sign-aware attention layers and inner-product scoring.

Layer ``l`` updates node ``v`` from its sampled occurrences ``w in S_v``::

    a1 = softmax_w(e_v . e_w / sqrt(d) + theta_l * m_vw)
    a2 = softmax_w(phi_l[t_vw])
    e_v <- 1/2 * sum_w (a1 + a2) * e_w

Queries, keys and values are the previous layer's embeddings themselves.
Nodes without samples keep their previous embedding. The final embedding
averages layers ``0..L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, NumericalError
from .sampler import SampleSet
from .spectral import SpectralBasis, pair_scores

DTYPE = torch.float64
THETA_INIT = math.log(math.e - 1.0)  # softplus(THETA_INIT) == 1


@dataclass
class ModelParams:
    n: int
    m: int
    embeddings: torch.Tensor  # (n + m, d), users first
    theta_raw: torch.Tensor  # (L,)
    phi: torch.Tensor  # (L, N_p)

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    @property
    def layers(self) -> int:
        return self.theta_raw.shape[0]

    @property
    def num_types(self) -> int:
        return self.phi.shape[1]

    def theta(self) -> torch.Tensor:
        return F.softplus(self.theta_raw)

    def tensors(self) -> list[torch.Tensor]:
        return [self.embeddings, self.theta_raw, self.phi]

    def clone(self) -> "ModelParams":
        return ModelParams(self.n, self.m, *(t.detach().clone() for t in self.tensors()))


def init_params(n: int, m: int, d: int, layers: int, num_types: int, seed: int, std: float = 0.1) -> ModelParams:
    rng = np.random.default_rng(seed)
    emb = torch.from_numpy(rng.normal(0.0, std, size=(n + m, d)))
    return ModelParams(
        n,
        m,
        emb.to(DTYPE),
        torch.full((layers,), THETA_INIT, dtype=DTYPE),
        torch.zeros(layers, num_types, dtype=DTYPE),
    )


@dataclass(frozen=True)
class AttentionInputs:
    """Per-occurrence tensors shared by every forward pass within an epoch."""

    origins: torch.Tensor
    targets: torch.Tensor
    types: torch.Tensor
    spectral: torch.Tensor  # m_vw per occurrence
    has_samples: torch.Tensor  # (order,) bool


def attention_inputs(samples: SampleSet, basis: SpectralBasis) -> AttentionInputs:
    order = len(samples.indptr) - 1
    if basis.order != order:
        raise ConfigError(f"spectral basis covers {basis.order} nodes, samples cover {order}")
    origins = samples.origins
    return AttentionInputs(
        torch.from_numpy(origins),
        torch.from_numpy(samples.targets),
        torch.from_numpy(samples.types),
        torch.from_numpy(pair_scores(basis, origins, samples.targets)).to(DTYPE),
        torch.from_numpy(np.diff(samples.indptr) > 0),
    )


@dataclass
class EmbeddingStack:
    n: int
    layers: list[torch.Tensor]  # E^(0) .. E^(L)
    final: torch.Tensor

    @property
    def users(self) -> torch.Tensor:
        return self.final[: self.n]

    @property
    def items(self) -> torch.Tensor:
        return self.final[self.n :]


def segment_softmax(logits: torch.Tensor, segments: torch.Tensor, size: int) -> torch.Tensor:
    """Softmax of ``logits`` within groups sharing the same ``segments`` id."""
    peak = torch.full((size,), -math.inf, dtype=logits.dtype)
    peak = peak.scatter_reduce(0, segments, logits.detach(), reduce="amax", include_self=True)
    ex = torch.exp(logits - peak[segments])
    total = torch.zeros(size, dtype=logits.dtype).index_add(0, segments, ex)
    return ex / total[segments]


def propagate(params: ModelParams, inputs: AttentionInputs) -> EmbeddingStack:
    emb = params.embeddings
    order, d = emb.shape
    if inputs.has_samples.shape[0] != order:
        raise ConfigError(f"samples cover {inputs.has_samples.shape[0]} nodes, embeddings {order}")
    if len(inputs.types) and int(inputs.types.max()) >= params.num_types:
        raise ConfigError("sampled path type exceeds the phi table; check the path length")
    src, dst = inputs.origins, inputs.targets
    theta = params.theta()
    keep = inputs.has_samples.unsqueeze(1)
    layers = [emb]
    for layer in range(params.layers):
        prev = layers[-1]
        score = (prev[src] * prev[dst]).sum(1) / math.sqrt(d) + theta[layer] * inputs.spectral
        weight = 0.5 * (
            segment_softmax(score, src, order) + segment_softmax(params.phi[layer][inputs.types], src, order)
        )
        agg = torch.zeros_like(prev).index_add(0, src, weight.unsqueeze(1) * prev[dst])
        out = torch.where(keep, agg, prev)
        if not torch.isfinite(out).all():
            raise NumericalError(f"non-finite embeddings produced by layer {layer + 1}")
        layers.append(out)
    final = torch.stack(layers).mean(0)
    return EmbeddingStack(params.n, layers, final)


def forward(params: ModelParams, samples: SampleSet, basis: SpectralBasis) -> EmbeddingStack:
    return propagate(params, attention_inputs(samples, basis))


def predict(stack: EmbeddingStack, u: int, i: int) -> float:
    m = stack.final.shape[0] - stack.n
    if not (0 <= u < stack.n and 0 <= i < m):
        raise ConfigError(f"index out of range: user {u} of {stack.n}, item {i} of {m}")
    return float(stack.final[u] @ stack.final[stack.n + i])


def scores(stack: EmbeddingStack, users: torch.Tensor, items: torch.Tensor) -> torch.Tensor:
    """Differentiable ``e_u . e_i`` for aligned user and item index tensors."""
    return (stack.final[users] * stack.final[stack.n + items]).sum(1)
