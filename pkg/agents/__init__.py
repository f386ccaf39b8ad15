"""Collaborating vehicle agents"""

from agents.cav_agent import FadeLeadAgent, create_cav_agent

__all__ = [
    "FadeLeadAgent",
    "create_cav_agent",
]
