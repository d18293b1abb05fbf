"""Hybrid termination-bug toolkit for MiniImp: interpreter, termination prover,
explicit-state model checker, fault localisation, patch generation and repair."""

from .lang import parse, pretty_print
from .termprover import InputDomain, prove
from .interp import ObserverConfig, run

__version__ = "0.1.0"

__all__ = ["parse", "pretty_print", "prove", "InputDomain", "run", "ObserverConfig"]
