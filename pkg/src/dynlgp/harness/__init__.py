"""Scenario ingestion, batch experiments and reporting."""
from .scenario import DanglingReference, Scenario, ScenarioError, bundled_scenario, load_scenario

__all__ = ["DanglingReference", "Scenario", "ScenarioError", "bundled_scenario", "load_scenario"]
