"""Hierarchical human motion prediction."""
from .goals import GoalExtractionError, Snapshot, approach_point, extract_goal
from .irl import IrlModel, StepCapExceeded, irl_fit, rollout_policy, soft_value_iteration
from .lowlevel import HumanConfig, generate_lowlevel
from .mdp import Demonstration, IllegalTransition, MdpError, SetTableMdp, scripted_expert
from .sources import (Composition, HumanEvent, HumanSource, HumanTrajectory, compose_actions,
                      compose_prediction, degrade_ground_truth, mdp_for_workspace, mdp_state)

__all__ = [
    "Composition", "Demonstration", "GoalExtractionError", "HumanConfig", "HumanEvent", "HumanSource",
    "HumanTrajectory", "IllegalTransition", "IrlModel", "MdpError", "SetTableMdp", "Snapshot",
    "StepCapExceeded", "approach_point", "compose_actions", "compose_prediction", "degrade_ground_truth",
    "extract_goal", "generate_lowlevel", "irl_fit", "mdp_for_workspace", "mdp_state", "rollout_policy",
    "scripted_expert", "soft_value_iteration",
]
