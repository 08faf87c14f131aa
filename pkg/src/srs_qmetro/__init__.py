"""Quantum-enhanced stimulated Raman scattering: channel, Fisher information and probe optimization."""

__version__ = "0.1.0"

from .channel import SrsParams, apply_channel, apply_loss
from .fock import (DensityMatrix, DimensionError, FockDims, NumericalIntegrityError,
                   TruncationError, TruncationWarning)
from .lineshape import Line, LineshapeParams, PulseSpec, compute_gamma_srs, compute_h_srs
from .metrology import FisherResult, evaluate, qfi, snr_per_shot
from .optimizer import SweepPlan, crossover_scan, optimize_probe, run_sweep
from .states import COHERENT, SQUEEZED, TMS, ProbeSpec, with_budget

__all__ = [
    "COHERENT", "DensityMatrix", "DimensionError", "FisherResult", "FockDims", "Line",
    "LineshapeParams", "NumericalIntegrityError", "ProbeSpec", "PulseSpec", "SQUEEZED",
    "SrsParams", "SweepPlan", "TMS", "TruncationError", "TruncationWarning", "apply_channel",
    "apply_loss", "compute_gamma_srs", "compute_h_srs", "crossover_scan", "evaluate",
    "optimize_probe", "qfi", "run_sweep", "snr_per_shot", "with_budget",
]
