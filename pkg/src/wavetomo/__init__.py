"""Desk-scale 2D ultrasound computed tomography.

Wave and Born forward models with exact adjoints, full-waveform and Born
inversion, learned data/artifact corrections, image-quality and task-based
assessment, and a study harness.
"""
from .acquisition import (ImagingSystem, MeasurementSet, Pulse, acquire, add_noise, build_system, encode,
                          pulse_waveform, sample_encoding, simulate_all, snr_to_noise_std)
from .assessment import choose_threshold, paired_significance, roc_and_auc, rrmse, ssim
from .born import BornOperator, IncidentCache, born_adjoint, born_apply, born_predict, build_incident_cache
from .grid import (C_WATER, CFL_LIMIT, Grid, cfl_number, check_cfl, embed_in_full_grid, extract_fov,
                   points_per_wavelength, slowness_to_sos, sos_to_slowness)
from .inversion import InversionConfig, ReconResult, born_reconstruct, fwi_reconstruct, regularizer
from .phantom import DatasetSplit, PhantomExample, build_split, generate_phantom, insert_tumor
from .wave import SimulationError, SourceTerm, WavePropagator

__version__ = "0.1.0"

__all__ = [
    "C_WATER", "CFL_LIMIT", "BornOperator", "DatasetSplit", "Grid", "ImagingSystem", "IncidentCache",
    "InversionConfig", "MeasurementSet", "PhantomExample", "Pulse", "ReconResult", "SimulationError",
    "SourceTerm", "WavePropagator", "acquire", "add_noise", "born_adjoint", "born_apply", "born_predict",
    "born_reconstruct", "build_incident_cache", "build_split", "build_system", "cfl_number", "check_cfl",
    "choose_threshold", "embed_in_full_grid", "encode", "extract_fov", "fwi_reconstruct", "generate_phantom",
    "insert_tumor", "paired_significance", "points_per_wavelength", "pulse_waveform", "regularizer", "roc_and_auc",
    "rrmse", "sample_encoding", "simulate_all", "slowness_to_sos", "snr_to_noise_std", "sos_to_slowness", "ssim",
]
