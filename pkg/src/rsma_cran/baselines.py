"""
Reference schemes sharing the RSMA optimizer: TIN and single-common-message RSMA.
"""

from __future__ import annotations

from dataclasses import dataclass

from .netmodel import ChannelState, SystemConfig
from .structure import (ClusterSets, DecodeStructure, RsmaStructure, build_clusters, build_decode_structure,
                        empty_decode)

SCHEMES = ("rsma", "tin", "scm")


@dataclass(frozen=True)
class SchemeSpec:
    kind: str = "rsma"
    private_cluster_size: int = 2
    common_cluster_size: int = 2
    decode_set_size: int = 2

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"unknown scheme {self.kind!r}; expected one of {SCHEMES}")

    @property
    def common_streams(self) -> int | None:
        """Number of common streams: 0 for TIN, 1 for SCM, per-user for RSMA."""
        return {"tin": 0, "scm": 1}.get(self.kind)

    @classmethod
    def from_config(cls, kind: str, config: SystemConfig) -> "SchemeSpec":
        return cls(kind, config.private_cluster_size, config.common_cluster_size, config.decode_set_size)


def make_tin_structure(clusters: ClusterSets) -> RsmaStructure:
    """Private streams only; every interference term is treated as noise."""
    K = 1 + max((k for s in clusters.private for k in s), default=-1)
    no_common = ClusterSets(clusters.private, tuple(frozenset() for _ in clusters.private))
    return RsmaStructure(no_common, empty_decode(K), scheme="tin")


def make_scm_structure(clusters: ClusterSets, num_users: int, carrier: int = 0) -> RsmaStructure:
    """One super-common stream, sent by every BS and decoded first by all users.

    The stream occupies the common precoder slot of ``carrier``; its rate is
    split across users through share variables.
    """
    if num_users < 1:
        raise ValueError("need at least one user")
    everyone = frozenset(range(num_users))
    common = tuple(frozenset({carrier}) for _ in clusters.private)
    decoders = tuple(everyone if k == carrier else frozenset() for k in range(num_users))
    order = tuple((carrier,) for _ in range(num_users))
    return RsmaStructure(ClusterSets(clusters.private, common), DecodeStructure(decoders, order),
                         scheme="scm", shared_common=True, carrier=carrier)


def build_structure(spec: SchemeSpec | str, channel: ChannelState, config: SystemConfig | None = None) -> RsmaStructure:
    if isinstance(spec, str):
        spec = SchemeSpec.from_config(spec, config) if config is not None else SchemeSpec(spec)
    clusters = build_clusters(channel, (spec.private_cluster_size, spec.common_cluster_size),
                              common=spec.kind == "rsma")
    if spec.kind == "tin":
        return make_tin_structure(clusters)
    if spec.kind == "scm":
        return make_scm_structure(clusters, channel.num_users)
    return RsmaStructure(clusters, build_decode_structure(channel, clusters, spec.decode_set_size), scheme="rsma")
