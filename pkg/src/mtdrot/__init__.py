"""Autocorrelation analysis for multi-target detection with rotations."""

from .basis import DiscBasis, build_basis, project, render_image, steer
from .estimate import MomentAccumulator, debias_1d, debias_2d
from .invariants import AngularDesign, auto3_V, autocorr3_1d, autocorr3_2d, bin_map, bin_reduce, s_hat_forward
from .model import MeasurementConfig, PlacementError, TargetSignal1D, rotate1d
from .recover import OptimizerOptions, invert_bispectrum, recover_2d

__all__ = [
    "AngularDesign",
    "DiscBasis",
    "MeasurementConfig",
    "MomentAccumulator",
    "OptimizerOptions",
    "PlacementError",
    "TargetSignal1D",
    "auto3_V",
    "autocorr3_1d",
    "autocorr3_2d",
    "bin_map",
    "bin_reduce",
    "build_basis",
    "debias_1d",
    "debias_2d",
    "invert_bispectrum",
    "project",
    "recover_2d",
    "render_image",
    "rotate1d",
    "s_hat_forward",
    "steer",
]
__version__ = "0.1.0"
