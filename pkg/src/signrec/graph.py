"""Interaction ingestion, k-core filtering, splitting and the signed bipartite graph.

Node numbering convention used everywhere in the package: users occupy
``0..n-1`` and item ``i`` is node ``n + i``.
"""

from __future__ import annotations

import logging
import math
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class Interaction(NamedTuple):
    user: int
    item: int
    sign: int  # 1 positive, 0 negative


# ---------------------------------------------------------------------------
# threshold rules

_OPS: dict[str, Callable[[float, float], bool]] = {
    ">": operator.gt,
    ">=": operator.ge,
    "<": operator.lt,
    "<=": operator.le,
    "==": operator.eq,
}
_CLAUSE = re.compile(r"^\s*(pos|neg)\s*(>=|<=|==|>|<)\s*([-+0-9.eE]+)\s*$")


@dataclass(frozen=True)
class ThresholdRule:
    """Maps a raw signal to a sign; ``None`` means the record is dropped.

    When ``negative`` is omitted every record failing the positive test
    counts as negative.
    """

    positive: tuple[str, float]
    negative: tuple[str, float] | None = None

    @classmethod
    def parse(cls, text: str) -> "ThresholdRule":
        """Parse ``"pos>3.5"`` or ``"pos>=4,neg<0.1"``."""
        clauses: dict[str, tuple[str, float]] = {}
        for part in text.split(","):
            match = _CLAUSE.match(part)
            if match is None:
                raise ConfigError(f"bad threshold clause {part!r} in rule {text!r}")
            kind, op, value = match.groups()
            if kind in clauses:
                raise ConfigError(f"duplicate {kind!r} clause in rule {text!r}")
            try:
                clauses[kind] = (op, float(value))
            except ValueError:
                raise ConfigError(f"bad threshold value {value!r}") from None
        if "pos" not in clauses:
            raise ConfigError(f"rule {text!r} needs a pos clause")
        return cls(clauses["pos"], clauses.get("neg"))

    def __call__(self, signal: float) -> int | None:
        op, value = self.positive
        if _OPS[op](signal, value):
            return 1
        if self.negative is None:
            return 0
        op, value = self.negative
        return 0 if _OPS[op](signal, value) else None

    def __str__(self) -> str:
        text = f"pos{self.positive[0]}{self.positive[1]:g}"
        if self.negative is not None:
            text += f",neg{self.negative[0]}{self.negative[1]:g}"
        return text


# ---------------------------------------------------------------------------
# ingestion


@dataclass
class Ingested:
    interactions: list[Interaction]
    user_keys: list[Hashable]
    item_keys: list[Hashable]
    conflicts: int = 0


def ingest_raw(
    records: Iterable[tuple[Hashable, Hashable, float]], rule: ThresholdRule
) -> Ingested:
    """Apply ``rule`` to raw records and reindex keys to contiguous ids.

    Indices follow first appearance among kept records. A pair recorded
    twice with different signs keeps the last occurrence; such conflicts are
    counted and logged.
    """
    records = list(records)
    if not records:
        raise DataError("no raw records to ingest")

    signs: dict[tuple[Hashable, Hashable], int] = {}
    conflicts = 0
    for user, item, signal in records:
        sign = rule(float(signal))
        if sign is None:
            continue
        key = (user, item)
        previous = signs.pop(key, None)
        if previous is not None and previous != sign:
            conflicts += 1
        signs[key] = sign  # re-insert so order reflects the last occurrence
    if conflicts:
        log.warning("%d user-item pairs had conflicting signs; kept the last record", conflicts)

    users: dict[Hashable, int] = {}
    items: dict[Hashable, int] = {}
    out = []
    for (user, item), sign in signs.items():
        u = users.setdefault(user, len(users))
        i = items.setdefault(item, len(items))
        out.append(Interaction(u, i, sign))
    return Ingested(out, list(users), list(items), conflicts)


def as_arrays(interactions: Sequence[Interaction]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not interactions:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    arr = np.asarray(interactions, dtype=np.int64).reshape(-1, 3)
    return arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy()


def _reindex(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    kept, new = np.unique(values, return_inverse=True)
    return kept, new.astype(np.int64)


def kcore_filter(
    interactions: Sequence[Interaction], k: int, *, return_kept: bool = False
):
    """Peel users and items with fewer than ``k`` interactions until stable.

    Positive and negative interactions count together. Survivors are
    reindexed in ascending order of their old index. With ``return_kept``
    the old indices of surviving users and items are returned as well.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    users, items, signs = as_arrays(interactions)
    alive = np.ones(len(users), dtype=bool)
    while True:
        du = np.bincount(users[alive], minlength=users.max(initial=-1) + 1)
        di = np.bincount(items[alive], minlength=items.max(initial=-1) + 1)
        keep = alive & (du[users] >= k) & (di[items] >= k)
        if keep.sum() == alive.sum():
            break
        alive = keep
    if not alive.any():
        raise DataError("k-core eliminated all data")
    kept_users, new_users = _reindex(users[alive])
    kept_items, new_items = _reindex(items[alive])
    out = [Interaction(*row) for row in zip(new_users.tolist(), new_items.tolist(), signs[alive].tolist())]
    if return_kept:
        return out, kept_users, kept_items
    return out


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class DatasetSplit:
    train: list[Interaction]
    validation: list[Interaction]
    test: list[Interaction]
    n: int
    m: int

    def part(self, name: str) -> list[Interaction]:
        return {"train": self.train, "val": self.validation, "test": self.test}[name]

    def without_negatives(self) -> "DatasetSplit":
        """Copy whose training part keeps only positive interactions."""
        return DatasetSplit([x for x in self.train if x.sign == 1], self.validation, self.test, self.n, self.m)


def split(
    interactions: Sequence[Interaction],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
    n: int | None = None,
    m: int | None = None,
) -> DatasetSplit:
    """Uniformly permute and cut into train/val/test.

    Train and validation sizes are floored; test takes the remainder.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    total = len(interactions)
    if total < 10:
        raise DataError(f"need at least 10 interactions to split, got {total}")
    order = np.random.default_rng(seed).permutation(total)
    n_train = math.floor(ratios[0] * total + 1e-9)
    n_val = math.floor(ratios[1] * total + 1e-9)
    rows = [interactions[j] for j in order.tolist()]
    users, items, _ = as_arrays(interactions)
    return DatasetSplit(
        train=rows[:n_train],
        validation=rows[n_train : n_train + n_val],
        test=rows[n_train + n_val :],
        n=int(users.max()) + 1 if n is None else n,
        m=int(items.max()) + 1 if m is None else m,
    )


# ---------------------------------------------------------------------------
# graph


def _csr(rows: np.ndarray, cols: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((cols, rows))
    indptr = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=size), out=indptr[1:])
    indices = cols[order].astype(np.int64)
    return indptr, indices


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SignedBipartiteGraph:
    """Positive and negative user-item edges stored as two symmetric CSR patterns."""

    n: int
    m: int
    pos_indptr: np.ndarray
    pos_indices: np.ndarray
    neg_indptr: np.ndarray
    neg_indices: np.ndarray
    pos_degree: np.ndarray = field(init=False)
    neg_degree: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("pos_indptr", "pos_indices", "neg_indptr", "neg_indices"):
            _frozen(getattr(self, name))
        object.__setattr__(self, "pos_degree", _frozen(np.diff(self.pos_indptr)))
        object.__setattr__(self, "neg_degree", _frozen(np.diff(self.neg_indptr)))

    @property
    def order(self) -> int:
        return self.n + self.m

    def pos_adj(self, v: int) -> np.ndarray:
        return self.pos_indices[self.pos_indptr[v] : self.pos_indptr[v + 1]]

    def neg_adj(self, v: int) -> np.ndarray:
        return self.neg_indices[self.neg_indptr[v] : self.neg_indptr[v + 1]]

    def degree(self) -> np.ndarray:
        return self.pos_degree + self.neg_degree

    def edges(self, sign: int) -> tuple[np.ndarray, np.ndarray]:
        """(user node, item node) arrays for every edge of the given sign."""
        indptr, indices = (self.pos_indptr, self.pos_indices) if sign == 1 else (self.neg_indptr, self.neg_indices)
        rows = np.repeat(np.arange(self.n), np.diff(indptr[: self.n + 1]))
        return rows, indices[: indptr[self.n]].copy()

    def interacted_items(self, u: int) -> np.ndarray:
        """Sorted item indices (0-based, not node ids) the user has an edge to."""
        return np.union1d(self.pos_adj(u), self.neg_adj(u)) - self.n


def build_graph(train: Sequence[Interaction], n: int, m: int) -> SignedBipartiteGraph:
    users, items, signs = as_arrays(train)
    if len(users) and (users.min() < 0 or users.max() >= n or items.min() < 0 or items.max() >= m):
        raise DataError("interaction index out of range for graph of size n=%d m=%d" % (n, m))
    keys = users * m + items
    if len(np.unique(keys)) != len(keys):
        raise DataError("duplicate user-item pair in training interactions")
    parts = []
    for sign in (1, 0):
        sel = signs == sign
        u, i = users[sel], items[sel] + n
        parts.extend(_csr(np.concatenate([u, i]), np.concatenate([i, u]), n + m))
    return SignedBipartiteGraph(n, m, *parts)


# ---------------------------------------------------------------------------
# canonical TSV files

DATASET_FILE = "dataset.tsv"
USERS_MAP = "users.map"
ITEMS_MAP = "items.map"


def write_dataset(directory: str | Path, data: DatasetSplit, user_keys=None, item_keys=None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / DATASET_FILE
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user\titem\tsign\tsplit\n")
        for name in SPLITS:
            for u, i, s in data.part(name):
                fh.write(f"{u}\t{i}\t{s}\t{name}\n")
    for keys, fname in ((user_keys, USERS_MAP), (item_keys, ITEMS_MAP)):
        if keys is not None:
            with open(directory / fname, "w", encoding="utf-8", newline="\n") as fh:
                for index, key in enumerate(keys):
                    fh.write(f"{key}\t{index}\n")
    return path


def read_mapping(path: str | Path) -> list[str]:
    keys: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'key<TAB>index'")
            try:
                keys[int(parts[1])] = parts[0]
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad index {parts[1]!r}") from None
    if sorted(keys) != list(range(len(keys))):
        raise DataError(f"{path}: indices are not contiguous from 0")
    return [keys[j] for j in range(len(keys))]


def dataset_file(path: str | Path) -> Path:
    path = Path(path)
    return path / DATASET_FILE if path.is_dir() else path


def read_dataset(path: str | Path) -> DatasetSplit:
    """Load the canonical TSV (a file, or a directory holding ``dataset.tsv``).

    ``n`` and ``m`` come from the sibling mapping files when present,
    otherwise from the largest ids seen.
    """
    path = dataset_file(path)
    parts: dict[str, list[Interaction]] = {name: [] for name in SPLITS}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from None
    with fh:
        if fh.readline().rstrip("\n") != "user\titem\tsign\tsplit":
            raise DataError(f"{path}: bad header, expected 'user\\titem\\tsign\\tsplit'")
        for lineno, line in enumerate(fh, 2):
            fields = line.rstrip("\n").split("\t")
            try:
                u, i, s = int(fields[0]), int(fields[1]), int(fields[2])
                name = fields[3]
                if len(fields) != 4 or s not in (0, 1) or name not in parts or u < 0 or i < 0:
                    raise ValueError
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row {line.rstrip()!r}") from None
            parts[name].append(Interaction(u, i, s))
    rows = parts["train"] + parts["val"] + parts["test"]
    if not rows:
        raise DataError(f"{path}: no interactions")
    users, items, _ = as_arrays(rows)
    n, m = int(users.max()) + 1, int(items.max()) + 1
    if (path.parent / USERS_MAP).exists():
        n = max(n, len(read_mapping(path.parent / USERS_MAP)))
    if (path.parent / ITEMS_MAP).exists():
        m = max(m, len(read_mapping(path.parent / ITEMS_MAP)))
    return DatasetSplit(parts["train"], parts["val"], parts["test"], n, m)
