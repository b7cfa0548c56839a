"""Grammar-guided synthesis of control Lyapunov barrier functions for
sampled-data switched controllers, with an interval branch-and-prune prover."""

from .config import ConfigError, load_problem
from .controller import SwitchedController, find_beta, simulate, verify_alpha
from .evolve import GpConfig, run
from .fitness import Candidate, EvolvedModes, FixedModes, SynthesisProblem
from .interval import Box
from .parse import parse_expr
from .reach import SystemModel, lte_bounds
from .verify import BoxSet, ForallQuery, prove_forall

__version__ = "0.1.0"
