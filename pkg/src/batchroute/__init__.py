"""Budget-constrained routing of queries to (model, batch size) states."""

from .core import ModelPool, ModelSpec, Query, State, format_money
from .frontier import Frontier, FrontierEntry
from .scheduler import Assignment, greedy_schedule, pack_batches

__version__ = "0.1.0"
