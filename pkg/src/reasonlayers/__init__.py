"""Unrolled optimization layers (GD, NAG, RNN) over learned quadratic energies."""
from . import _backend
from .energynet import EnergyNet, make_energy_net, make_ground_truth, q_error, q_forward
from .layers import GD, NAG, RNN, GdLayer, NagLayer, RnnCellWeights, RnnLayer, forward, unroll_backward
from .numkernel import SeededRng, spectral_norm, sym_eig
from .quadratic import QuadraticProblem, opt_solve

BACKEND = _backend.name

__all__ = [
    "BACKEND", "GD", "NAG", "RNN", "EnergyNet", "GdLayer", "NagLayer", "QuadraticProblem",
    "RnnCellWeights", "RnnLayer", "SeededRng", "forward", "make_energy_net", "make_ground_truth",
    "opt_solve", "q_error", "q_forward", "spectral_norm", "sym_eig", "unroll_backward",
]
