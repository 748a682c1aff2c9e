"""Robust output-feedback gain synthesis for uncertain discrete-time systems."""
from .errors import (ConfigError, GradientFailure, InconsistentHistory, InconsistentScenario, InvalidInputError,
                     InvalidStart, RolloutDiverged, SamplingStalled, SipgainsError, SynthesisInfeasible)
from .feasible import export_cloud, feasible_box, read_cloud, sample_feasible
from .model import (PolicyForm, PolicyParams, ProblemSpec, Scenario, SystemModel, UncertaintySpec, rollout,
                    terminal_bound, terminal_tracking)
from .nlp import NlpProblem, NlpResult, SolverSettings, check_kkt, fd_gradient, multi_start_solve, solve
from .reduction import (ReductionSettings, ScenarioSet, SynthesisReport, build_inner_max_constraint,
                        build_inner_max_cost, build_outer_min, extract_scenario, local_reduction)
from .sets import Ball, Box, Product, empty_set
from .validate import ValidationReport, sample_consistent_scenario, validate
from .zoo import get_spec, quadrotor_model, quadrotor_spec, toy1d_spec, toy2d_spec

__version__ = "0.1.0"
