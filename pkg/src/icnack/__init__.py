"""Content and forwarding NACKs for named-data networks: a deterministic simulator."""
from .bloom import BloomFilter, BloomParams, fp_approx, fp_exact, fp_optimal, freshness_for, optimal_k
from .consumer import Consumer, ConsumerKind, ConsumerProfile
from .crypto import KeyPair, KeyRegistry, LinkKey, TimeWindow, sign_content, verify_content
from .packets import ContentObject, ContentType, FNack, Interest, Name, NackReason, parse_name
from .engine import Metrics, MetricsReport, Simulator, Topology
from .producer import Catalog, Producer
from .router import Router, RouterConfig, Strategy
from .scenario import Scenario, ScenarioError, bundled_path, mean_in, run

__version__ = "0.1.0"

__all__ = [
    "BloomFilter", "BloomParams", "fp_approx", "fp_exact", "fp_optimal", "freshness_for",
    "optimal_k", "KeyPair", "KeyRegistry", "LinkKey", "TimeWindow", "sign_content",
    "verify_content", "ContentObject", "ContentType", "FNack", "Interest", "Name",
    "NackReason", "parse_name", "Consumer", "ConsumerKind", "ConsumerProfile", "Metrics",
    "MetricsReport", "Simulator", "Topology", "Catalog", "Producer", "Router", "RouterConfig",
    "Strategy", "Scenario", "ScenarioError", "bundled_path", "mean_in", "run",
]
