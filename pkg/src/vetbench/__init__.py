"""Vet runtime policy-enforcement defenses for smart-home platforms.

A testbed is instantiated twice, once vanilla and once with a defense, the
same event sequence is replayed on both, and the final states are compared.
"""

from vetbench.defenses import DefenseKind, make_engine, select_policies
from vetbench.events import EventSequence, TestSuite, gen_stress_suites, gen_random_suite, load_sequences
from vetbench.harness import CampaignReport, Mode, Outcome, Verdict, compare, run_campaign, run_testcase
from vetbench.platform import ActionCommand, App, DeviceSpec, Platform, StatusUpdate, SystemState, Trigger
from vetbench.policy import PolicySpec, evaluate, parse_expr, parse_policy, relevant
from vetbench.testbed import TestbedConfig, instantiate, load_config, reset_pair, save_config

__all__ = [
    "ActionCommand",
    "App",
    "CampaignReport",
    "DefenseKind",
    "DeviceSpec",
    "EventSequence",
    "Mode",
    "Outcome",
    "Platform",
    "PolicySpec",
    "StatusUpdate",
    "SystemState",
    "TestSuite",
    "TestbedConfig",
    "Trigger",
    "Verdict",
    "compare",
    "evaluate",
    "gen_stress_suites",
    "gen_random_suite",
    "instantiate",
    "load_config",
    "load_sequences",
    "make_engine",
    "parse_expr",
    "parse_policy",
    "relevant",
    "reset_pair",
    "run_campaign",
    "run_testcase",
    "save_config",
    "select_policies",
]
