"""Signed BPR training loop and the checkpoint format."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError, NumericalError
from .graph import DatasetSplit, SignedBipartiteGraph, as_arrays, build_graph
from .metrics import evaluate
from .model import DTYPE, ModelParams, attention_inputs, init_params, propagate, scores
from .pathenc import PathTypeTable, build_table
from .sampler import sample_neighborhoods
from .spectral import SpectralBasis

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = -0.2
    beta: float = 0.1
    lr: float = 1e-2
    weight_decay: float = 1e-4
    epochs: int = 1000
    patience: int = 50
    batch_size: int = 2048
    seed: int = 0
    d: int = 64
    d_h: int = 64
    layers: int = 3
    path_length: int = 3
    max_walks: int | None = None
    k: int = 20

    def __post_init__(self):
        if not -1.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (-1, 1), got {self.alpha}")
        for name in ("d", "d_h", "layers", "path_length", "batch_size", "k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("epochs", "patience", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.max_walks is not None and self.max_walks < 1:
            raise ConfigError("max_walks must be positive when set")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# negative item sampling


def sample_unobserved(graph: SignedBipartiteGraph, u: int, rng: np.random.Generator, retries: int = 100) -> int:
    """Uniform item the user has no training interaction with."""
    seen = graph.interacted_items(u)
    if len(seen) >= graph.m:
        raise DataError(f"user {u} interacted with every item; nothing to sample")
    for _ in range(retries):
        j = int(rng.integers(graph.m))
        k = np.searchsorted(seen, j)
        if k == len(seen) or seen[k] != j:
            return j
    pool = np.setdiff1d(np.arange(graph.m), seen, assume_unique=True)
    return int(pool[rng.integers(len(pool))])


def sample_unobserved_batch(
    graph: SignedBipartiteGraph, users: np.ndarray, rng: np.random.Generator, retries: int = 100
) -> np.ndarray:
    """Vectorised :func:`sample_unobserved`: one draw per entry of ``users``."""
    m = graph.m
    edge_u, edge_i = [], []
    for sign in (1, 0):
        u, i = graph.edges(sign)
        edge_u.append(u)
        edge_i.append(i - graph.n)
    keys = np.sort(np.concatenate(edge_u) * m + np.concatenate(edge_i))
    out = rng.integers(m, size=len(users))
    todo = np.isin(users * m + out, keys)
    for _ in range(retries):
        if not todo.any():
            return out
        out[todo] = rng.integers(m, size=int(todo.sum()))
        todo[todo] = np.isin(users[todo] * m + out[todo], keys)
    for idx in np.flatnonzero(todo):
        out[idx] = sample_unobserved(graph, int(users[idx]), rng, retries=0)
    return out


# ---------------------------------------------------------------------------
# loss


def bpr_loss(stack, users, items, signs, negatives, beta: float) -> torch.Tensor:
    """Summed signed BPR loss.

    Positive rows add ``-log sigmoid(y_ui - y_uj)``; negative rows add
    ``+log sigmoid(beta * (y_ui - y_uj))``.
    """
    users, items, signs, negatives = (torch.as_tensor(np.asarray(x), dtype=torch.long) for x in (users, items, signs, negatives))
    diff = scores(stack, users, items) - scores(stack, users, negatives)
    if not torch.isfinite(diff).all():
        raise NumericalError("non-finite predicted scores in loss")
    pos = signs == 1
    return -F.logsigmoid(diff[pos]).sum() + F.logsigmoid(beta * diff[~pos]).sum()


# ---------------------------------------------------------------------------
# optimisation


def make_optimizer(params: ModelParams, config: TrainConfig) -> torch.optim.Optimizer:
    for t in params.tensors():
        t.requires_grad_(True)
    return torch.optim.AdamW(
        params.tensors(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=config.weight_decay
    )


def train_epoch(
    params: ModelParams,
    optimizer: torch.optim.Optimizer,
    graph: SignedBipartiteGraph,
    data: DatasetSplit,
    basis: SpectralBasis,
    table: PathTypeTable,
    config: TrainConfig,
    epoch: int,
) -> tuple[ModelParams, float]:
    """One pass over the shuffled training rows; returns the mean per-row loss."""
    samples = sample_neighborhoods(graph, table, config.seed + epoch, config.max_walks)
    inputs = attention_inputs(samples, basis)
    users, items, signs = as_arrays(data.train)
    rng = np.random.default_rng((config.seed, epoch))
    order = rng.permutation(len(users))
    users, items, signs = users[order], items[order], signs[order]
    negatives = sample_unobserved_batch(graph, users, rng)

    total = 0.0
    for batch, start in enumerate(range(0, len(users), config.batch_size)):
        sl = slice(start, start + config.batch_size)
        optimizer.zero_grad()
        stack = propagate(params, inputs)
        loss = bpr_loss(stack, users[sl], items[sl], signs[sl], negatives[sl], config.beta)
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite loss in epoch {epoch}, batch {batch}")
        loss.backward()
        optimizer.step()
        total += loss.item()
    return params, total / max(len(users), 1)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_recall: float
    val_ndcg: float
    seconds: float


def evaluation_samples(graph: SignedBipartiteGraph, table: PathTypeTable, config: TrainConfig):
    """Walks used whenever a trained model is scored; fixed by the base seed."""
    return sample_neighborhoods(graph, table, config.seed, config.max_walks)


def fit(
    graph: SignedBipartiteGraph,
    data: DatasetSplit,
    basis: SpectralBasis,
    config: TrainConfig,
    validate: Callable[[ModelParams], tuple[float, float]] | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Train with early stopping on validation Recall@K; returns the best parameters.

    Training stops once more than ``config.patience`` consecutive epochs
    fail to improve the best validation recall.
    """
    if not data.train or not data.validation:
        raise DataError("training needs non-empty train and validation splits")
    table = build_table(config.path_length)
    params = init_params(data.n, data.m, config.d, config.layers, table.size, config.seed)
    if validate is None:
        eval_inputs = attention_inputs(evaluation_samples(graph, table, config), basis)

        def validate(p: ModelParams) -> tuple[float, float]:
            with torch.no_grad():
                report = evaluate(propagate(p, eval_inputs), data, config.k, part="val")
            return report.recall, report.ndcg

    optimizer = make_optimizer(params, config)
    best, best_recall, stale = params.clone(), -math.inf, 0
    history: list[EpochRecord] = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        params, loss = train_epoch(params, optimizer, graph, data, basis, table, config, epoch)
        recall, ndcg = validate(params)
        record = EpochRecord(epoch, loss, recall, ndcg, time.perf_counter() - started)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        log.info("epoch %d loss %.6f val recall %.4f ndcg %.4f", epoch, loss, recall, ndcg)
        if recall > best_recall:
            best, best_recall, stale = params.clone(), recall, 0
        else:
            stale += 1
            if stale > config.patience:
                break
    return best, history


def train_model(data: DatasetSplit, basis: SpectralBasis, config: TrainConfig, **kwargs):
    """Build the training graph and :func:`fit`."""
    return fit(build_graph(data.train, data.n, data.m), data, basis, config, **kwargs)


# ---------------------------------------------------------------------------
# checkpoint


def save_checkpoint(path: str | Path, params: ModelParams, config: TrainConfig, d_h: int) -> None:
    header = (
        f"{params.n} {params.m} {params.d} {params.layers} {d_h} {config.path_length} "
        f"{float(config.alpha)!r} {float(config.beta)!r} {params.num_types}\n"
    )
    with open(path, "wb") as fh:
        fh.write(b"SIGF 1\n")
        fh.write(header.encode())
        for t in params.tensors():
            fh.write(t.detach().numpy().astype("<f8").tobytes())


@dataclass(frozen=True)
class CheckpointHeader:
    n: int
    m: int
    d: int
    layers: int
    d_h: int
    path_length: int
    alpha: float
    beta: float
    num_types: int


def load_checkpoint(path: str | Path) -> tuple[ModelParams, CheckpointHeader]:
    try:
        with open(path, "rb") as fh:
            magic = fh.readline()
            header_line = fh.readline()
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if magic != b"SIGF 1\n":
        raise DataError(f"{path}: not a SIGF v1 checkpoint")
    parts = header_line.decode("ascii", "replace").split()
    try:
        ints = [int(x) for x in parts[:6]] + [int(parts[8])]
        header = CheckpointHeader(*ints[:6], float(parts[6]), float(parts[7]), ints[6])
        if len(parts) != 9:
            raise ValueError
    except (ValueError, IndexError):
        raise DataError(f"{path}: malformed checkpoint header") from None
    if header.num_types != build_table(header.path_length).size:
        raise DataError(f"{path}: N_p does not match the path length")
    order = header.n + header.m
    sizes = [order * header.d, header.layers, header.layers * header.num_types]
    if len(blob) != 8 * sum(sizes):
        raise DataError(f"{path}: expected {sum(sizes)} floats, found {len(blob) / 8:g}")
    flat = torch.from_numpy(np.frombuffer(blob, dtype="<f8").astype(np.float64)).to(DTYPE)
    emb, theta, phi = torch.split(flat, sizes)
    params = ModelParams(
        header.n,
        header.m,
        emb.reshape(order, header.d).clone(),
        theta.clone(),
        phi.reshape(header.layers, header.num_types).clone(),
    )
    return params, header
