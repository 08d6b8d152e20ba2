"""Plane-wave ultrafast ultrasound: point spread functions, a fast convolutional
forward model, particle flows, a Gaussian limit model and SVD clutter filtering."""
from .params import AcquisitionParams, ImagingGrid, PeriodicBox
from .psf import compounded_psf, exact_psf, first_order_psf, sample_kernel, separable_psf
from .forward import ScattererSet, beamform, compound, fast_frame, simulate_rf
from .dynamics import AffineFlow, VesselGeometry, build_ensemble
from .covariance import assemble_V, sample_gaussian
from .recon import SVDClutterFilter, build_casorati, power_doppler
from .io import ExperimentConfig, read_array, write_array

__version__ = "0.1.0"

__all__ = [
    "AcquisitionParams",
    "ImagingGrid",
    "PeriodicBox",
    "exact_psf",
    "first_order_psf",
    "separable_psf",
    "compounded_psf",
    "sample_kernel",
    "ScattererSet",
    "simulate_rf",
    "beamform",
    "compound",
    "fast_frame",
    "AffineFlow",
    "VesselGeometry",
    "build_ensemble",
    "assemble_V",
    "sample_gaussian",
    "SVDClutterFilter",
    "build_casorati",
    "power_doppler",
    "ExperimentConfig",
    "read_array",
    "write_array",
]
