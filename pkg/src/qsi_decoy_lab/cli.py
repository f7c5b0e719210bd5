"""``qsi-decoy-lab`` command-line front end.

Every command writes its tables into ``--out`` together with a
``manifest.json`` holding the fully-resolved config and a SHA-256 per file.
Outputs are byte-identical for identical config and seed; the wall-clock
timestamp is kept out of the emitted files for that reason.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .config import RunConfig
from .decoy import throughput_fom
from .errors import ConfigError, DomainError, HeraldingImpossibleError, InfeasibleError, QSIError
from .imaging import ImagingScene, InterceptResend, simulate_raster_scan, uncertainty_surface
from .photon_sources import crossover_mean, single_photon_probability, wcs_distribution
from .sweep import (
    CurveTable,
    SweepGrid,
    curve_spread,
    fmt_float,
    max_tolerable_loss,
    optimize_mu,
    rate_vs_loss,
)

log = logging.getLogger("qsi_decoy_lab")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INFEASIBLE = 4


@dataclass
class ReportBundle:
    command: str
    out_dir: Path
    files: dict[str, str] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    infeasible: bool = False

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "version": __version__,
            "config": self.metadata.get("config", {}),
            "files": [{"path": name, "sha256": digest} for name, digest in sorted(self.files.items())],
        }


class _Writer:
    """Buffers outputs in memory and writes them in one pass at the end of a run."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.pending: dict[str, str] = {}

    def csv(self, name: str, header, rows) -> None:
        if "csv" not in self.config.output_formats:
            return
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        self.pending[name] = buf.getvalue()

    def raw_csv(self, name: str, text: str) -> None:
        if "csv" in self.config.output_formats:
            self.pending[name] = text

    def json(self, name: str, payload: dict, always: bool = False) -> None:
        if always or "json" in self.config.output_formats:
            self.pending[name] = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"

    def flush(self, bundle: ReportBundle) -> ReportBundle:
        try:
            bundle.out_dir.mkdir(parents=True, exist_ok=True)
            for name, text in self.pending.items():
                data = text.encode("utf-8")
                (bundle.out_dir / name).write_bytes(data)
                bundle.files[name] = hashlib.sha256(data).hexdigest()
            bundle.metadata["config"] = self.config.to_dict()
            manifest = json.dumps(bundle.manifest(), indent=2, sort_keys=True) + "\n"
            (bundle.out_dir / "manifest.json").write_text(manifest)
        except OSError as exc:
            raise OSError(f"{bundle.out_dir}: cannot write outputs ({exc.strerror or exc})") from exc
        return bundle


def _sources(config: RunConfig):
    return config.sources["WCS"], config.sources["HSPS"]


def cmd_fig1(config: RunConfig, out_dir: Path) -> ReportBundle:
    c = config.fig1
    fano, n_vals, grid = uncertainty_surface(c.alpha, c.fano_range, c.n_range, c.steps)
    w = _Writer(config)
    rows = [
        [fmt_float(f), fmt_float(n), fmt_float(grid[i, j])]
        for i, f in enumerate(fano)
        for j, n in enumerate(n_vals)
    ]
    w.csv("fig1.csv", ["F", "mean_n", "delta_alpha"], rows)
    return w.flush(ReportBundle("fig1", out_dir))


def cmd_fig2(config: RunConfig, out_dir: Path) -> ReportBundle:
    c = config.fig2
    _, hsps = _sources(config)
    xs = np.linspace(0.0, c.x_max, c.steps + 1)
    rows = []
    for x in xs:
        p_wcs = float(wcs_distribution(float(x), c.n_cut).probs[1])
        try:
            p_hsps = fmt_float(single_photon_probability(hsps.with_intensity(float(x)), c.n_cut))
        except HeraldingImpossibleError:
            p_hsps = ""  # no herald can fire: the row is kept, the value left empty
        rows.append([fmt_float(x), fmt_float(p_wcs), p_hsps])
    crossover = crossover_mean(hsps, c.n_cut, c.bracket)
    w = _Writer(config)
    w.csv("fig2.csv", ["x", "p1_wcs", "p1_hsps"], rows)
    w.json("fig2_summary.json", {
        "crossover_mean": crossover,
        "bracket": list(c.bracket),
        "hsps": {
            "herald_efficiency": hsps.herald_efficiency,
            "herald_dark": hsps.herald_dark,
            "correlation_prob": hsps.correlation_prob,
        },
    })
    return w.flush(ReportBundle("fig2", out_dir))


def _regime_tables(config: RunConfig) -> dict[str, CurveTable]:
    wcs, hsps = _sources(config)
    tables = {}
    for name, regime in config.fig3.regimes.items():
        try:
            template = dataclasses.replace(
                config.decoy,
                signal_intensity=max(regime.mu_points),
                decoy_intensities=regime.decoys,
            )
            grid = SweepGrid(
                loss_points=config.fig3.loss_points,
                mu_points=regime.mu_points,
                sources=(wcs, hsps),
                decoy=template,
                channel=config.channel,
                decoy_mode=config.fig3.decoy_mode,
            )
        except QSIError as exc:
            raise ConfigError(f"fig3.regimes.{name}: {exc}") from exc
        tables[name] = rate_vs_loss(grid)
    return tables


def best_rate_ratio(table: CurveTable, loss_db: float) -> float | None:
    """HSPS/WCS ratio of the best rate over the regime's mu set at one loss."""
    best = {}
    for kind in ("WCS", "HSPS"):
        rates = [r.rate for r in table.select(source=kind, loss_db=loss_db)]
        best[kind] = max(rates) if rates else 0.0
    if best["WCS"] <= 0:
        return None
    return best["HSPS"] / best["WCS"]


def cmd_fig3(config: RunConfig, out_dir: Path) -> ReportBundle:
    tables = _regime_tables(config)
    w = _Writer(config)
    spread_rows = []
    summary: dict = {"regimes": {}}
    for name, table in tables.items():
        w.raw_csv(f"fig3{name}.csv", table.to_csv())
        ratios = []
        for loss in config.fig3.loss_points:
            for kind in ("WCS", "HSPS"):
                try:
                    spread = fmt_float(curve_spread(table, loss, kind))
                except QSIError:
                    spread = ""
                spread_rows.append([name, kind, fmt_float(loss), spread])
            ratios.append({"loss_db": loss, "hsps_over_wcs": best_rate_ratio(table, loss)})
        summary["regimes"][name] = {"hsps_over_wcs_best_rate": ratios}
    w.csv("fig3_spread.csv", ["regime", "source", "loss_db", "spread"], spread_rows)
    w.json("fig3_summary.json", summary)
    return w.flush(ReportBundle("fig3", out_dir))


def cmd_simulate(config: RunConfig, out_dir: Path) -> ReportBundle:
    c = config.simulate
    if c.scene_path is not None:
        try:
            scene = ImagingScene.from_file(c.scene_path)
        except OSError as exc:
            raise OSError(f"{c.scene_path}: cannot read scene ({exc.strerror or exc})") from exc
        except (DomainError, ValueError) as exc:
            raise ConfigError(f"simulate.scene_path: {exc}") from exc
    else:
        scene = ImagingScene.uniform(c.width, c.height, c.alpha)
    report = simulate_raster_scan(
        scene,
        config.sources[c.source],
        dataclasses.replace(config.channel, loss_db=c.loss_db),
        c.pulses_per_pixel,
        InterceptResend() if c.eavesdropper else None,
        seed=config.seed,
        qber_threshold=c.qber_threshold,
    )
    w = _Writer(config)
    w.raw_csv("simulate_pixels.csv", report.to_csv())
    w.json("simulate_summary.json", report.summary(), always=True)
    return w.flush(ReportBundle("simulate", out_dir))


def cmd_optimize(config: RunConfig, out_dir: Path) -> ReportBundle:
    c = config.optimize
    ch = dataclasses.replace(config.channel, loss_db=c.loss_db)
    results = {}
    infeasible = False
    for kind, source in config.sources.items():
        bracket = c.brackets[kind]
        entry: dict = {"bracket": list(bracket), "repetition_rate": source.repetition_rate}
        try:
            mu_star, rate_star = optimize_mu(source, ch, config.decoy, bracket, c.tolerance, c.decoy_mode)
            if rate_star <= c.rate_floor:
                raise InfeasibleError(f"best rate {rate_star:.3g} does not exceed rate_floor {c.rate_floor}")
            max_loss = max_tolerable_loss(
                source, mu_star, config.channel, config.decoy, c.rate_floor, c.loss_cap_db,
                decoy_mode=c.decoy_mode,
            )
        except InfeasibleError as exc:
            infeasible = True
            entry.update({"infeasible": True, "reason": str(exc)})
        else:
            entry.update({
                "infeasible": False,
                "mu_star": mu_star,
                "rate_star": rate_star,
                "max_loss_db": max_loss if math.isfinite(max_loss) else f">{fmt_float(c.loss_cap_db)}",
                "throughput_bps": throughput_fom(rate_star, source.repetition_rate),
            })
        results[kind] = entry
    w = _Writer(config)
    w.json("optimum.json", {"loss_db": c.loss_db, "sources": results}, always=True)
    bundle = w.flush(ReportBundle("optimize", out_dir))
    bundle.infeasible = infeasible
    return bundle


COMMANDS: dict[str, Callable[[RunConfig, Path], ReportBundle]] = {
    "fig1": cmd_fig1,
    "fig2": cmd_fig2,
    "fig3": cmd_fig3,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsi-decoy-lab",
        description="WCS vs heralded single-photon sources for decoy-state secured imaging.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, default=None, help="JSON run configuration (defaults if omitted)")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(command: str, config: RunConfig, out_dir: Path) -> ReportBundle:
    bundle = COMMANDS[command](config, out_dir)
    bundle.metadata["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    return bundle


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = RunConfig.load(args.config)
        if args.seed is not None:
            config = dataclasses.replace(config, seed=args.seed)
        bundle = run(args.command, config, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except QSIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    for name in sorted(bundle.files):
        log.info("wrote %s", bundle.out_dir / name)
    if bundle.infeasible:
        print(f"infeasible: see {bundle.out_dir / 'optimum.json'}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
