"""Exhaustive N-1 / N-2 contingency screening with a failure-rate weighted risk index."""
from .caseio import (CaseDocument, CaseParseError, CaseValidationError, ReliabilityTable, load_case,
                     load_dynamics, load_ieee118, load_reliability, parse_matpower_case, parse_native_case,
                     serialize_native_case)
from .engine import (EngineConfig, Scenario, ScenarioResult, enumerate_scenarios, evaluate_scenario,
                     run_all)
from .grid import (AdmittanceMatrix, Branch, Bus, ComponentRef, Generator, GridCase, build_ybus,
                   component_universe)
from .powerflow import check_limits, redispatch, solve_power_flow
from .risk import RiskEntry, RiskRanking, compute_risk, emit_reports, scenario_frequency
from .smallsignal import DynamicParams, eigenvalues, linearize
from .topology import IslandPartition, find_islands, is_severe_islanding

__version__ = "0.1.0"
