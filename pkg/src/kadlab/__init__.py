"""Kademlia DHT laboratory for CID censorship: attack, detection and region-based mitigation."""

from kadlab.attack import (
    AttackCostModel,
    SybilBatch,
    attack_cost,
    generate_sybils,
    launch_attack,
    maintain_attack,
)
from kadlab.detector import (
    CplDistribution,
    DetectionVerdict,
    detect,
    empirical_distribution,
    kl_divergence,
    model_cdf_jth,
    model_distribution,
)
from kadlab.estimator import NetsizeEstimate, NetsizeEstimator, NetsizeSample, UninitializedEstimator
from kadlab.keyspace import common_prefix_length, derive_id, from_hex, to_hex, xor_distance
from kadlab.mitigation import (
    RegionQueryResult,
    choose_min_cpl,
    find_by_cpl,
    region_find_providers,
    region_provide,
)
from kadlab.simnet import ProviderRecord, SimConfig, SimNetwork, SybilCensoring, build_network

__version__ = "0.1.0"
