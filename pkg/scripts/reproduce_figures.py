"""Regenerate the three figure datasets and the optimum report, then print headline numbers.

Usage: python3 scripts/reproduce_figures.py [--config run.json] [--out results]
"""
import argparse
import json
import sys
from pathlib import Path

from qsi_decoy_lab.cli import main


def run(command: str, config: Path | None, out: Path) -> Path:
    argv = [command, "--out", str(out / command)]
    if config is not None:
        argv += ["--config", str(config)]
    code = main(argv)
    if code != 0:
        sys.exit(f"{command} exited with code {code}")
    return out / command


def headline(out: Path) -> None:
    fig2 = json.loads((out / "fig2" / "fig2_summary.json").read_text())
    print(f"fig2: P1 crossover at mean photon number {fig2['crossover_mean']:.4f}")
    fig3 = json.loads((out / "fig3" / "fig3_summary.json").read_text())
    for name, regime in sorted(fig3["regimes"].items()):
        for point in regime["hsps_over_wcs_best_rate"]:
            if point["loss_db"] in (10.0, 20.0, 30.0) and point["hsps_over_wcs"] is not None:
                print(f"fig3 regime {name}: HSPS/WCS best rate at {point['loss_db']:g} dB = {point['hsps_over_wcs']:.2f}")
    optimum = json.loads((out / "optimize" / "optimum.json").read_text())
    print("optimize:", json.dumps(optimum, indent=2, sort_keys=True))


def cli() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--out", type=Path, default=Path("results"))
    args = parser.parse_args()
    for command in ("fig1", "fig2", "fig3", "optimize"):
        print(f"wrote {run(command, args.config, args.out)}")
    headline(args.out)


if __name__ == "__main__":
    cli()
