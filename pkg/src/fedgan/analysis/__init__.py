"""Numerical checks of the convergence theory against logged runs."""
from .constants import (AgentFields, EstimatedConstants, GradientField, PreconditionError, ProbeBox,
                        estimate_constants)
from .lemmas import (LemmaReport, WindowTrajectory, check_lemma1, check_lemma2, check_lemmas,
                     check_windows, lemma1_bound, lemma2_bound, overall_status, replay_window,
                     window_trajectory, write_lemma_csv)
from .ode import (InterpolatedPath, OdeError, OdeSolution, TrackingReport, deviation_at, euler, integrate_ode,
                  quantile_starts, rk4, theorem1_deviation)
from .timescale import LambdaResult, TimescaleReport, check_two_timescale, find_lambda, validate_schedule

__all__ = [
    "AgentFields", "EstimatedConstants", "GradientField", "PreconditionError", "ProbeBox",
    "estimate_constants", "LemmaReport", "WindowTrajectory", "check_lemma1", "check_lemma2",
    "check_lemmas", "check_windows", "lemma1_bound", "lemma2_bound", "overall_status",
    "replay_window", "window_trajectory", "write_lemma_csv", "InterpolatedPath", "OdeError",
    "OdeSolution", "TrackingReport", "deviation_at", "euler", "integrate_ode", "quantile_starts", "rk4",
    "theorem1_deviation", "LambdaResult", "TimescaleReport", "check_two_timescale", "find_lambda",
    "validate_schedule",
]
