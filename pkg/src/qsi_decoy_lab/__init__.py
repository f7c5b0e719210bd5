"""Decoy-state key rates and imaging uncertainty for weak-coherent and heralded sources."""
from __future__ import annotations

__version__ = "0.1.0"

from .channel import ChannelSpec, GainQber, error_n, gain_and_qber, transmittance, yield_n
from .decoy import (
    DecoyBounds,
    DecoyProtocolSpec,
    EstimationMethod,
    KeyRateResult,
    binary_entropy,
    decoy_bounds_analytic_wcs,
    decoy_bounds_lp,
    secure_key_rate,
    throughput_fom,
)
from .imaging import (
    ImagingRunReport,
    ImagingScene,
    InterceptResend,
    absorption_uncertainty,
    fano_factor,
    simulate_raster_scan,
    uncertainty_surface,
)
from .photon_sources import (
    PhotonNumberDistribution,
    SourceKind,
    SourceSpec,
    SourceStatistics,
    crossover_mean,
    hsps_distribution,
    single_photon_probability,
    source_statistics,
    wcs_distribution,
)
from .sweep import CurveTable, SweepGrid, curve_spread, max_tolerable_loss, optimize_mu, rate_vs_loss

__all__ = [
    "ChannelSpec", "GainQber", "error_n", "gain_and_qber", "transmittance", "yield_n",
    "DecoyBounds", "DecoyProtocolSpec", "EstimationMethod", "KeyRateResult", "binary_entropy",
    "decoy_bounds_analytic_wcs", "decoy_bounds_lp", "secure_key_rate", "throughput_fom",
    "ImagingRunReport", "ImagingScene", "InterceptResend", "absorption_uncertainty", "fano_factor",
    "simulate_raster_scan", "uncertainty_surface",
    "PhotonNumberDistribution", "SourceKind", "SourceSpec", "SourceStatistics", "crossover_mean",
    "hsps_distribution", "single_photon_probability", "source_statistics", "wcs_distribution",
    "CurveTable", "SweepGrid", "curve_spread", "max_tolerable_loss", "optimize_mu", "rate_vs_loss",
]
