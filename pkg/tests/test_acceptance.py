"""Acceptance criteria 1-10, each printing one PASS/FAIL line."""
import time

import numpy as np
import pytest

from qsi_decoy_lab.channel import ChannelSpec, error_n, gain_and_qber, yield_n
from qsi_decoy_lab.cli import COMMANDS, main
from qsi_decoy_lab.decoy import DecoyProtocolSpec, decoy_bounds_analytic_wcs, decoy_bounds_lp, throughput_fom
from qsi_decoy_lab.imaging import (
    ImagingScene,
    InterceptResend,
    absorption_uncertainty,
    fano_factor,
    simulate_raster_scan,
    uncertainty_surface,
)
from qsi_decoy_lab.photon_sources import (
    SourceKind,
    SourceSpec,
    crossover_mean,
    single_photon_probability,
    vacuum_distribution,
    wcs_distribution,
)
from qsi_decoy_lab.sweep import SweepGrid, rate_vs_loss
from test_lp_oracle import N_CUT, grid_extreme_component_1, toy_instance

WCS = SourceSpec(SourceKind.WCS)
HSPS = SourceSpec(SourceKind.HSPS, herald_efficiency=0.5, herald_dark=1e-5, correlation_prob=0.7)
LOSSES = tuple(float(v) for v in range(0, 42, 2))
LOW_MU = (0.01, 0.05, 0.1)
HIGH_MU = (0.2, 0.25, 0.3)


def best_rate(table, kind, loss):
    return max(r.rate for r in table.select(source=kind, loss_db=loss))


@pytest.fixture(scope="module")
def fig3_tables():
    start = time.perf_counter()
    a = rate_vs_loss(SweepGrid(LOSSES, LOW_MU, (WCS, HSPS), DecoyProtocolSpec(0.1, (0.001, 0.0))))
    b = rate_vs_loss(SweepGrid(LOSSES, HIGH_MU, (WCS, HSPS), DecoyProtocolSpec(0.3, (0.1, 0.0))))
    return a, b, time.perf_counter() - start


def test_criterion_01_fano_table(acceptance_report):
    exact = {(0.3, 0.005): 0.7015, (0.3, 0.5): 0.85, (0.05, 0.005): 0.95025, (0.05, 0.05): 0.9525, (0.05, 0.5): 0.975}
    ok = all(round(fano_factor(n, g), 4) == round(v, 4) for (n, g), v in exact.items())
    near = fano_factor(0.3, 0.05)
    ok = ok and abs(near - 0.714) <= 0.002
    acceptance_report(1, "Fano table", ok, f"five values exact to 4 dp; F(0.3, 0.05) = {near:.4f} vs 0.714 +/- 0.002")


def test_criterion_02_fig1_properties(acceptance_report):
    start = time.perf_counter()
    f, n, grid = uncertainty_surface(0.5, (0.7, 1.0), (0.05, 1.0), 31)
    dec_n = bool(np.all(np.diff(grid, axis=1) < 0))
    inc_f = bool(np.all(np.diff(grid, axis=0) > 0))
    quad = absorption_uncertainty(0.5, f[:, None], 4 * n[None, :])
    worst = float(np.max(np.abs(quad - grid / 2) / (grid / 2)))
    elapsed = time.perf_counter() - start
    ok = dec_n and inc_f and worst <= 1e-12 and elapsed < 1.0
    acceptance_report(
        2, "Fig 1 properties", ok,
        f"decreasing in n: {dec_n}, increasing in F: {inc_f}, max rel err of 4n scaling {worst:.1e}, {elapsed:.3f}s",
    )


def test_criterion_03_fig2_reproduction(acceptance_report):
    start = time.perf_counter()
    xs = np.linspace(0.01, 0.2, 400)
    margin = min(
        single_photon_probability(HSPS.with_intensity(x)) - float(wcs_distribution(x).probs[1]) for x in xs
    )
    x_star = crossover_mean(HSPS, 20, (0.1, 1.0))
    elapsed = time.perf_counter() - start
    ok = margin > 0 and 0.45 <= x_star <= 0.75 and elapsed < 1.0
    acceptance_report(
        3, "Fig 2 reproduction", ok,
        f"min P1 margin on [0.01, 0.2] = {margin:.4f}, crossover x* = {x_star:.4f}, {elapsed:.3f}s",
    )


def test_criterion_04_fig3_properties(acceptance_report, fig3_tables):
    a, b, elapsed = fig3_tables
    monotone = True
    for table in (a, b):
        for kind in ("WCS", "HSPS"):
            for mu in {r.mu for r in table.rows}:
                rates = [r.rate for r in table.select(source=kind, mu=mu)]
                monotone &= all(y <= x for x, y in zip(rates, rates[1:]))
    ratio10 = best_rate(a, "HSPS", 10.0) / best_rate(a, "WCS", 10.0)
    ratio30 = best_rate(a, "HSPS", 30.0) / best_rate(a, "WCS", 30.0)
    ok = monotone and 3 <= ratio10 <= 30 and ratio30 > ratio10 and elapsed < 10
    acceptance_report(
        4, "Fig 3 properties", ok,
        f"nonincreasing: {monotone}, HSPS/WCS at 10 dB = {ratio10:.2f}, at 30 dB = {ratio30:.2f}, {elapsed:.2f}s",
    )


def test_criterion_05_decoy_sandwich(acceptance_report):
    start = time.perf_counter()
    slack = 1e-12  # LP constraint-residual tolerance
    failures = []
    for mu in (0.1, 0.3, 0.5):
        nu = mu / 3
        for loss in (5.0, 10.0, 20.0, 30.0):
            ch = ChannelSpec(loss_db=loss)
            exact = [gain_and_qber(wcs_distribution(m, 40), ch) for m in (mu, nu)]
            vac = gain_and_qber(vacuum_distribution(15), ch)
            y1_a, _, e1_a = decoy_bounds_analytic_wcs(exact[0], exact[1], mu, nu, vac.gain)
            dists = [wcs_distribution(m, 15) for m in (mu, nu)] + [vacuum_distribution(15)]
            lp = decoy_bounds_lp(dists, [gain_and_qber(d, ch) for d in dists], 15)
            eta = ch.transmittance
            y1_t, e1_t = yield_n(1, eta, ch.y0), error_n(1, eta, ch.y0, ch.e_det)
            if not (y1_a * (1 - slack) <= lp.y1_lower <= y1_t * (1 + slack)):
                failures.append(f"y1 at mu={mu}, {loss} dB")
            if not (e1_t * (1 - slack) <= lp.e1_upper <= e1_a * (1 + slack)):
                failures.append(f"e1 at mu={mu}, {loss} dB")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 5
    acceptance_report(
        5, "decoy bound sandwich", ok,
        f"12 grid points, violations: {failures or 'none'}, {elapsed:.2f}s",
    )


def test_criterion_06_lp_oracle(acceptance_report):
    start = time.perf_counter()
    dists, gains = toy_instance()
    lp = decoy_bounds_lp(dists, gains, N_CUT)
    brute_y = grid_extreme_component_1(dists, [g.gain for g in gains], gains[-1].gain, maximize=False)
    brute_z = grid_extreme_component_1(
        dists, [g.gain * g.qber for g in gains], gains[-1].gain * gains[-1].qber, maximize=True
    )
    elapsed = time.perf_counter() - start
    dy, dz = abs(lp.y1_lower - brute_y), abs(lp.z1_upper - brute_z)
    ok = dy <= 2e-3 and dz <= 2e-3 and elapsed < 30
    acceptance_report(
        6, "LP oracle equivalence", ok,
        f"|Y1 lp - grid| = {dy:.1e}, |e1*Y1 lp - grid| = {dz:.1e}, {elapsed:.2f}s",
    )


def test_criterion_07_monte_carlo_uncertainty(acceptance_report):
    start = time.perf_counter()
    source = SourceSpec(SourceKind.WCS, 0.1)
    ch = ChannelSpec(loss_db=0.0)
    report = simulate_raster_scan(ImagingScene.uniform(40, 25, 0.5), source, ch, 10_000, seed=7)
    empirical = float(np.std(report.alpha_est, ddof=1))
    predicted = absorption_uncertainty(0.5, 1.0, 10_000 * 0.1 * ch.transmittance)
    elapsed = time.perf_counter() - start
    rel = abs(empirical - predicted) / predicted
    ok = rel <= 0.10 and elapsed < 60
    acceptance_report(
        7, "Monte Carlo uncertainty", ok,
        f"1000 pixels: empirical std {empirical:.5f} vs predicted {predicted:.5f} ({rel:.1%}), {elapsed:.2f}s",
    )


def test_criterion_08_attack_detection(acceptance_report):
    start = time.perf_counter()
    ch = ChannelSpec(loss_db=0.0)
    scene = ImagingScene.uniform(8, 8, 0.0)
    clean = simulate_raster_scan(scene, SourceSpec(SourceKind.WCS, 0.1), ch, 10_000, seed=17)
    attacked = simulate_raster_scan(scene, SourceSpec(SourceKind.WCS, 0.1), ch, 10_000, InterceptResend(), seed=17)
    elapsed = time.perf_counter() - start
    ok = (
        abs(attacked.qber_measured - 0.25) <= 0.02
        and attacked.sifted_bits >= 10_000
        and clean.qber_measured <= ch.e_det + 0.01
        and attacked.eavesdrop_flag
        and not clean.eavesdrop_flag
        and elapsed < 10
    )
    acceptance_report(
        8, "attack detection", ok,
        f"QBER attacked {attacked.qber_measured:.4f} ({attacked.sifted_bits} sifted bits, flag "
        f"{attacked.eavesdrop_flag}) vs clean {clean.qber_measured:.4f} (flag {clean.eavesdrop_flag}), {elapsed:.2f}s",
    )


def test_criterion_09_throughput(acceptance_report, fig3_tables):
    a, _, _ = fig3_tables
    wcs_bps = throughput_fom(best_rate(a, "WCS", 10.0), 1e9)
    hsps_bps = throughput_fom(best_rate(a, "HSPS", 10.0), 1e7)
    ok = wcs_bps > hsps_bps
    acceptance_report(
        9, "throughput figure of merit", ok,
        f"at 10 dB WCS {wcs_bps:.3e} bit/s (1 GHz) vs HSPS {hsps_bps:.3e} bit/s (10 MHz)",
    )


def test_criterion_10_determinism(acceptance_report, tmp_path):
    start = time.perf_counter()
    mismatched = []
    for command in sorted(COMMANDS):
        outputs = []
        for run in ("first", "second"):
            out = tmp_path / command / run
            assert main([command, "--out", str(out), "--seed", "99"]) == 0
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outputs[0] != outputs[1] or not outputs[0]:
            mismatched.append(command)
    elapsed = time.perf_counter() - start
    ok = not mismatched
    acceptance_report(
        10, "determinism", ok,
        f"{len(COMMANDS)} commands run twice, differing: {mismatched or 'none'}, {elapsed:.2f}s",
    )
