"""Budget-aware value-of-information control for multi-hop QA under dual budgets."""

from .budget import LADDER, Action, Budget, ChargeVector, new_budget, pressure, termination_bound
from .controller import ControllerConfig, select_action
from .finalizer import FinalizationFeatures, decide
from .harness import RunConfig, run_ablation, run_episode, run_ladder

__all__ = [
    "LADDER", "Action", "Budget", "ChargeVector", "ControllerConfig", "FinalizationFeatures",
    "RunConfig", "decide", "new_budget", "pressure", "run_ablation", "run_episode", "run_ladder",
    "select_action", "termination_bound",
]
