"""Selfish D2D social-data offloading: stochastic model, formation game, simulator."""

from d2doffload.model import (
    AgreementNetwork,
    ContactGraph,
    CostModel,
    ScenarioConfig,
    UserProfile,
    generate_scenario,
)
from d2doffload.stochastic import ParetoParams, RngStream, WeibullParams

__all__ = [
    "AgreementNetwork",
    "ContactGraph",
    "CostModel",
    "ParetoParams",
    "RngStream",
    "ScenarioConfig",
    "UserProfile",
    "WeibullParams",
    "generate_scenario",
]

__version__ = "0.1.0"
