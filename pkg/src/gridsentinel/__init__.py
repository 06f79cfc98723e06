"""Decentralized detection of coordinated replay attacks across grid regions.

Each region runs a Kalman/LQG loop with a residual detector and publishes
two ratios; a fixed-point ledger aggregates them exactly, and a broadcast
gossip benchmark estimates the same quantity peer to peer.
"""
from .aggregator import GlobalReport, no_attack_prob, no_attack_prob_enum
from .config import ScenarioConfig, load_config, parse_config
from .detector import DetectorConfig, calibrate, local_stats, residual_statistic
from .errors import (
    CalibrationError,
    ConfigurationError,
    ConnectivityError,
    GridSentinelError,
    IncompleteRoundError,
    InvalidStatisticsError,
    RiccatiDivergenceError,
)
from .gossip import GossipGraph, GossipState, precision_threshold
from .harness import ScenarioResult, compare_protocols, run_scenario
from .plant import LtiPlantModel, ReplayAttack, synthetic_region_model

__version__ = "0.1.0"

__all__ = [
    "CalibrationError", "ConfigurationError", "ConnectivityError", "DetectorConfig", "GlobalReport",
    "GossipGraph", "GossipState", "GridSentinelError", "IncompleteRoundError", "InvalidStatisticsError",
    "LtiPlantModel", "ReplayAttack", "RiccatiDivergenceError", "ScenarioConfig", "ScenarioResult",
    "calibrate", "compare_protocols", "load_config", "local_stats", "no_attack_prob", "no_attack_prob_enum",
    "parse_config", "residual_statistic", "run_scenario", "synthetic_region_model", "precision_threshold",
]
