"""Compare Monte Carlo absorption-estimate spread with the analytic uncertainty.

Scans alpha and the probe mean for a weak coherent source on a lossless channel,
then contrasts a heralded source with a coherent one at equal gate count and
equal mean photon number per gate.

Usage: python3 scripts/validate_imaging_mc.py [--pixels 1000] [--pulses 10000] [--seed 7]
"""
import argparse

import numpy as np

from qsi_decoy_lab.channel import ChannelSpec
from qsi_decoy_lab.imaging import ImagingScene, absorption_uncertainty, simulate_raster_scan
from qsi_decoy_lab.photon_sources import SourceKind, SourceSpec, herald_probability, source_statistics

LOSSLESS = ChannelSpec(loss_db=0.0)


def coherent_scan(pixels: int, pulses: int, seed: int) -> None:
    print("alpha    mu     empirical  predicted  rel.diff")
    for mu in (0.01, 0.1):
        for alpha in (0.1, 0.5, 0.9):
            scene = ImagingScene.uniform(pixels, 1, alpha)
            est = simulate_raster_scan(scene, SourceSpec(SourceKind.WCS, mu), LOSSLESS, pulses, seed=seed).alpha_est
            empirical = float(np.std(est, ddof=1))
            predicted = absorption_uncertainty(alpha, 1.0, pulses * mu * LOSSLESS.transmittance)
            print(f"{alpha:5.2f}  {mu:5.2f}  {empirical:9.5f}  {predicted:9.5f}  {empirical / predicted - 1:+8.2%}")


def heralded_versus_coherent(pixels: int, pump: int, seed: int) -> None:
    hsps = SourceSpec(SourceKind.HSPS, 0.1, 0.5, 1e-5, 0.7)
    stats = source_statistics(hsps.distribution())
    gates = round(pump * herald_probability(0.1, 0.5, 1e-5))
    wcs = SourceSpec(SourceKind.WCS, stats.mean)
    scene = ImagingScene.uniform(pixels, 1, 0.5)
    s_h = float(np.std(simulate_raster_scan(scene, hsps, LOSSLESS, pump, seed=seed).alpha_est, ddof=1))
    s_w = float(np.std(simulate_raster_scan(scene, wcs, LOSSLESS, gates, seed=seed + 1).alpha_est, ddof=1))
    n = gates * stats.mean
    print(f"\nheralded source: mean {stats.mean:.4f} per herald, Fano {stats.fano:.4f}, about {gates} heralds per pixel")
    print(f"  heralded std {s_h:.5f} (predicted {absorption_uncertainty(0.5, stats.fano, n):.5f})")
    print(f"  coherent std {s_w:.5f} (predicted {absorption_uncertainty(0.5, 1.0, n):.5f})")


def cli() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--pixels", type=int, default=1000)
    parser.add_argument("--pulses", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    coherent_scan(args.pixels, args.pulses, args.seed)
    heralded_versus_coherent(args.pixels, 63_000, args.seed)


if __name__ == "__main__":
    cli()
