"""
Combinatorial RSMA structure: serving clusters and common-message decoding.

The clustering and decode-set rules here are deterministic heuristics:
each stream is served by its strongest BSs, a common message is decoded by
its owner plus the users that see the strongest signal from the BSs
carrying it, and each user decodes the strongest common messages first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netmodel import ChannelState


@dataclass(frozen=True)
class ClusterSets:
    """Per-BS sets of users whose private / common stream the BS carries."""

    private: tuple[frozenset[int], ...]
    common: tuple[frozenset[int], ...]

    @property
    def num_bs(self) -> int:
        return len(self.private)

    def serving(self, k: int, kind: str = "private") -> tuple[int, ...]:
        sets = self.private if kind == "private" else self.common
        return tuple(b for b, users in enumerate(sets) if k in users)

    def mask(self, num_users: int, kind: str = "private") -> np.ndarray:
        """(B, K) boolean matrix, True where BS b carries user k's stream."""
        sets = self.private if kind == "private" else self.common
        out = np.zeros((len(sets), num_users), dtype=bool)
        for b, users in enumerate(sets):
            out[b, list(users)] = True
        return out


@dataclass(frozen=True)
class DecodeStructure:
    """Decode sets and SIC orders.

    ``order[k]`` lists the owners of the common messages user ``k`` decodes,
    in decoding sequence (first decoded first).
    """

    decoders: tuple[frozenset[int], ...]
    order: tuple[tuple[int, ...], ...]

    @property
    def decoded(self) -> tuple[frozenset[int], ...]:
        return tuple(frozenset(o) for o in self.order)

    def rank(self, k: int, i: int) -> int:
        """1-based position of message ``i`` in user ``k``'s decoding order."""
        try:
            return self.order[k].index(i) + 1
        except ValueError:
            raise ValueError(f"user {k} does not decode the common message of {i}") from None

    def pairs(self) -> list[tuple[int, int]]:
        """All (owner i, decoder k) pairs with i in I_k, sorted by (k, rank)."""
        return [(i, k) for k, seq in enumerate(self.order) for i in seq]


@dataclass(frozen=True)
class RsmaStructure:
    """Everything the optimizer keeps fixed: clusters and decoding.

    ``shared_common`` marks a single super-common stream whose rate is split
    across all users through share variables (the SCM baseline). The stream
    is carried in the precoder slot of ``carrier``.
    """

    clusters: ClusterSets
    decode: DecodeStructure
    scheme: str = "rsma"
    shared_common: bool = False
    carrier: int = 0

    @property
    def num_users(self) -> int:
        return len(self.decode.order)

    @property
    def common_owners(self) -> tuple[int, ...]:
        """Users owning a common stream that is actually transmitted."""
        return tuple(k for k in range(self.num_users)
                     if self.clusters.serving(k, "common") and self.decode.decoders[k])

    def decode_matrix(self) -> np.ndarray:
        """(K, K) boolean, entry [i, k] True when user k decodes i's message."""
        K = self.num_users
        out = np.zeros((K, K), dtype=bool)
        for i, k in self.decode.pairs():
            out[i, k] = True
        return out


def without_common(structure: RsmaStructure, owners) -> RsmaStructure:
    """Copy of ``structure`` with the common streams of ``owners`` removed."""
    drop = set(owners)
    if not drop:
        return structure
    clusters = ClusterSets(structure.clusters.private,
                           tuple(frozenset(s - drop) for s in structure.clusters.common))
    decoders = tuple(frozenset() if i in drop else m for i, m in enumerate(structure.decode.decoders))
    order = tuple(tuple(i for i in seq if i not in drop) for seq in structure.decode.order)
    return RsmaStructure(clusters, DecodeStructure(decoders, order), structure.scheme,
                         structure.shared_common and structure.carrier not in drop, structure.carrier)


def _top_indices(scores: np.ndarray, count: int) -> list[int]:
    # stable sort on the negated scores: ties resolved by lower index
    return [int(i) for i in np.argsort(-scores, kind="stable")[:count]]


def build_clusters(channel: ChannelState, sizes: tuple[int, int] = (2, 2), *, common: bool = True) -> ClusterSets:
    """Serve each user's private (common) stream from its ``s_p`` (``s_c``) strongest BSs."""
    s_p, s_c = sizes
    B, K = channel.num_bs, channel.num_users
    if not (1 <= s_p <= B and 1 <= s_c <= B):
        raise ValueError("cluster sizes must lie in [1, num_bs]")
    norms = channel.link_norms()
    private = [set() for _ in range(B)]
    common_sets = [set() for _ in range(B)]
    for k in range(K):
        for b in _top_indices(norms[:, k], s_p):
            private[b].add(k)
        if common:
            for b in _top_indices(norms[:, k], s_c):
                common_sets[b].add(k)
    return ClusterSets(tuple(map(frozenset, private)), tuple(map(frozenset, common_sets)))


def _gain_from(channel: ChannelState, user: int, bss) -> float:
    bss = list(bss)
    if not bss:
        return 0.0
    return float(np.linalg.norm(channel.h[bss, user, :]))


def build_decode_structure(channel: ChannelState, clusters: ClusterSets, d: int = 2) -> DecodeStructure:
    """Decode sets ``M_k`` of size ``d + 1`` and strongest-first SIC orders.

    Users without any BS carrying their common stream own no common message.
    ``d`` is clamped to ``K - 1``.
    """
    if d < 0:
        raise ValueError("decode set size must be >= 0")
    K = channel.num_users
    d = min(d, K - 1)
    decoders: list[frozenset[int]] = []
    for k in range(K):
        bss = clusters.serving(k, "common")
        if not bss:
            decoders.append(frozenset())
            continue
        gains = np.array([_gain_from(channel, j, bss) for j in range(K)])
        gains[k] = -np.inf
        decoders.append(frozenset({k, *_top_indices(gains, d)}))

    order = []
    for k in range(K):
        owners = [i for i in range(K) if k in decoders[i]]
        strength = {i: _gain_from(channel, k, clusters.serving(i, "common")) for i in owners}
        order.append(tuple(sorted(owners, key=lambda i: (-strength[i], i))))
    return DecodeStructure(tuple(decoders), tuple(order))


def residual_set(decode: DecodeStructure, i: int, k: int) -> frozenset[int]:
    """Owners whose messages user ``k`` decodes after message ``i``."""
    r = decode.rank(k, i)
    return frozenset(decode.order[k][r:])


def empty_decode(num_users: int) -> DecodeStructure:
    return DecodeStructure(tuple(frozenset() for _ in range(num_users)),
                           tuple(() for _ in range(num_users)))


def make_rsma_structure(channel: ChannelState, sizes: tuple[int, int] = (2, 2), d: int = 2) -> RsmaStructure:
    clusters = build_clusters(channel, sizes)
    return RsmaStructure(clusters, build_decode_structure(channel, clusters, d), scheme="rsma")


def structure_to_dict(structure: RsmaStructure) -> dict:
    return {
        "scheme": structure.scheme,
        "shared_common": structure.shared_common,
        "carrier": structure.carrier,
        "private_clusters": [sorted(s) for s in structure.clusters.private],
        "common_clusters": [sorted(s) for s in structure.clusters.common],
        "users": [
            {"user": k, "decoders": sorted(structure.decode.decoders[k]),
             "decoding_order": list(structure.decode.order[k])}
            for k in range(structure.num_users)
        ],
    }


def structure_from_dict(data: dict) -> RsmaStructure:
    clusters = ClusterSets(tuple(frozenset(s) for s in data["private_clusters"]),
                           tuple(frozenset(s) for s in data["common_clusters"]))
    users = sorted(data["users"], key=lambda u: u["user"])
    decode = DecodeStructure(tuple(frozenset(u["decoders"]) for u in users),
                             tuple(tuple(u["decoding_order"]) for u in users))
    for i, k in decode.pairs():
        if k not in decode.decoders[i]:
            raise ValueError(f"decode sets are not dual: user {k} decodes {i} but is not in M_{i}")
    return RsmaStructure(clusters, decode, data.get("scheme", "rsma"),
                         bool(data.get("shared_common", False)), int(data.get("carrier", 0)))


def dump_structure(structure: RsmaStructure, path: str | Path) -> None:
    Path(path).write_text(json.dumps(structure_to_dict(structure), indent=2) + "\n")


def load_structure(path: str | Path) -> RsmaStructure:
    return structure_from_dict(json.loads(Path(path).read_text()))
