"""Desk-scale differentially private data synthesis.

Mechanisms and RDP accounting, four synthesizers (DP-MERF, DPDM-lite, Private
Evolution, DP-FETA) plus public-data selection, fidelity metrics, utility
protocols with private checkpoint selection, and a config-driven pipeline.
"""
from .accountant import AccountantLedger, PrivacySpec, calibrate_sigma, compose_and_convert, delta_default
from .dataio import Dataset, load_dataset, save_dataset, split_dataset
from .errors import BudgetError, CalibrationError, ValidationError
from .kernels import BACKEND
from .rng import SeededRng

__version__ = "0.1.0"

__all__ = [
    "AccountantLedger",
    "BACKEND",
    "BudgetError",
    "CalibrationError",
    "Dataset",
    "PrivacySpec",
    "SeededRng",
    "ValidationError",
    "calibrate_sigma",
    "compose_and_convert",
    "delta_default",
    "load_dataset",
    "save_dataset",
    "split_dataset",
]
