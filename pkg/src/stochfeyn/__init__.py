"""Randomized Hamiltonian Feynman product formula for the Schrodinger-Ito equation."""
from .grid import Grid, GridError, Wavefunction, gaussian, inner, make_grid, norm, to_momentum, to_position
from .noise import WienerPath, levy_modulus, refine, refined, sample
from .propagator import StepPlan, apply_B, apply_P, apply_Q, apply_U, apply_Y, propagate
from .quantize import quantize, quantize_exp_symbol
from .symbols import HypothesisWarning, SymbolError, SymbolModel, builtin

__version__ = "0.1.0"
