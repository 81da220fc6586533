"""Local-independence influence graphs for dynamical statistical models."""
from ._backend import BACKEND
from .errors import (DynographError, EvaluationError, ModelError, QueryError,
                     SimulationError, TimeInhomogeneousError)
from .model import (AttributeDecl, ComponentSpec, Correlation, Fixed, GaussianRandom,
                    InputSchedule, Kind, SystemSpec, canonicalize_deterministic,
                    dependencies, validate)
from .dsl import parse_model, print_model
from .influence import InfluenceGraph, derive_graph
from .simulate import SimConfig, TrajectoryBundle, simulate

__version__ = "0.1.0"
