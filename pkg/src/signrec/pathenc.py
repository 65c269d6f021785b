"""Integer ids for edge-sign sequences.

A sequence of length ``l`` gets id ``(2**l - 2) + code`` where ``code`` reads
the signs as a binary number, first edge most significant, ``+`` = 0 and
``-`` = 1. Ids of length-``l`` sequences therefore fill a contiguous block
right after all shorter ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import ConfigError

MAX_LENGTH = 16
_BITS = {"+": 0, "-": 1, "−": 1}


def offset(length: int) -> int:
    """First id used by sequences of ``length`` signs."""
    return (1 << length) - 2


@dataclass(frozen=True)
class PathTypeTable:
    max_length: int

    @property
    def size(self) -> int:
        return 2 * ((1 << self.max_length) - 1)

    def __len__(self) -> int:
        return self.size

    def strings(self) -> list[str]:
        return [id_to_signs(k, self) for k in range(self.size)]


def build_table(max_length: int) -> PathTypeTable:
    if not 1 <= max_length <= MAX_LENGTH:
        raise ConfigError(f"path length must be in 1..{MAX_LENGTH}, got {max_length}")
    return PathTypeTable(max_length)


def type_id(signs: str | Iterable[str | int], table: PathTypeTable) -> int:
    """Id of a sign sequence given as ``"+-"`` or as bits ``[0, 1]``."""
    seq = list(signs)
    if not 1 <= len(seq) <= table.max_length:
        raise ConfigError(f"sign sequence length must be in 1..{table.max_length}, got {len(seq)}")
    code = 0
    for s in seq:
        bit = _BITS.get(s) if isinstance(s, str) else s
        if bit not in (0, 1):
            raise ConfigError(f"bad sign {s!r}")
        code = 2 * code + bit
    return offset(len(seq)) + code


def id_to_signs(tid: int, table: PathTypeTable) -> str:
    if not 0 <= tid < table.size:
        raise ConfigError(f"path type id {tid} outside 0..{table.size - 1}")
    length = (tid + 2).bit_length() - 1
    code = tid - offset(length)
    return "".join("-" if (code >> (length - 1 - k)) & 1 else "+" for k in range(length))


def type_length(tid: int) -> int:
    return (tid + 2).bit_length() - 1
