"""Rate, error and secret-key-rate model of a fiber quantum repeater chain."""
from .bell_algebra import BellDiagonal
from .network_model import NetworkParams, RateReport, SessionPlan
from .optimizer import SearchConfig, optimize_protocol
from .session_pipeline import evaluate_protocol

__all__ = [
    "BellDiagonal",
    "NetworkParams",
    "RateReport",
    "SearchConfig",
    "SessionPlan",
    "evaluate_protocol",
    "optimize_protocol",
]
__version__ = "0.1.0"
