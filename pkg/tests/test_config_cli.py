import csv
import hashlib
import json
import math

import pytest

from qsi_decoy_lab import __version__
from qsi_decoy_lab.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, main
from qsi_decoy_lab.config import RunConfig
from qsi_decoy_lab.errors import ConfigError
from qsi_decoy_lab.photon_sources import SourceKind


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def run_cli(tmp_path, command, payload=None, out="out", seed=None):
    args = [command, "--out", str(tmp_path / out)]
    if payload is not None:
        args += ["--config", str(write_config(tmp_path, payload, f"{out}.json"))]
    if seed is not None:
        args += ["--seed", str(seed)]
    return main(args), tmp_path / out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---- configuration ----------------------------------------------------------------

def test_defaults_materialize_every_section():
    cfg = RunConfig.load(None).to_dict()
    assert set(cfg) >= {"seed", "sources", "channel", "decoy", "fig1", "fig2", "fig3", "simulate", "optimize"}
    assert cfg["channel"] == {"loss_db": 10.0, "eta_b": 1.0, "y0": 1e-6, "e_det": 0.01}
    assert cfg["sources"]["HSPS"]["correlation_prob"] == 0.7
    json.dumps(cfg)  # fully serializable


def test_partial_config_overrides_only_named_fields(tmp_path):
    cfg = RunConfig.load(write_config(tmp_path, {"channel": {"e_det": 0.02}, "sources": {"HSPS": {"herald_dark": 1e-6}}}))
    assert cfg.channel.e_det == 0.02 and cfg.channel.y0 == 1e-6
    assert cfg.sources["HSPS"].herald_dark == 1e-6
    assert cfg.sources["HSPS"].kind is SourceKind.HSPS
    assert cfg.sources["WCS"].kind is SourceKind.WCS


def test_round_trip_through_dict():
    cfg = RunConfig()
    assert RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("payload,where", [
    ({"chanel": {}}, "chanel"),
    ({"channel": {"loss": 3}}, "channel"),
    ({"channel": {"y0": 2.0}}, "channel"),
    ({"fig1": {"fano_range": [1.0, 0.7]}}, "fig1"),
    ({"fig1": {"n_range": []}}, "fig1"),
    ({"fig3": {"loss_points": []}}, "fig3"),
    ({"fig3": {"regimes": {"a": {"mu_points": [0.1], "decoys": [0.2, 0.0]}}}}, "fig3"),
    ({"seed": -4}, "seed"),
    ({"output_formats": ["xml"]}, "output_formats"),
    ({"sources": {"LED": {}}}, "LED"),
    ({"optimize": {"brackets": {"WCS": [0.0, 1.0]}}}, "brackets"),
])
def test_invalid_configs_name_the_offending_field(tmp_path, payload, where):
    with pytest.raises(ConfigError, match=where):
        RunConfig.load(write_config(tmp_path, payload))


def test_malformed_json_reports_line_and_column(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": 3,\n  "channel": {"y0": }\n}\n')
    with pytest.raises(ConfigError, match=r"line 3, column \d+"):
        RunConfig.load(path)


# ---- commands -------------------------------------------------------------------

def manifest_is_consistent(out):
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == __version__
    assert manifest["config"] == json.loads(json.dumps(manifest["config"]))
    for entry in manifest["files"]:
        data = (out / entry["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == entry["sha256"]
    return manifest


def test_fig1_outputs_surface(tmp_path):
    code, out = run_cli(tmp_path, "fig1")
    assert code == EXIT_OK
    rows = read_csv(out / "fig1.csv")
    assert list(rows[0]) == ["F", "mean_n", "delta_alpha"]
    assert len(rows) == 31 * 31
    by_n = {}
    for r in rows:
        by_n.setdefault(r["mean_n"], {})[float(r["F"])] = float(r["delta_alpha"])
    for cells in by_n.values():
        assert cells[1.0] > cells[0.7]
    manifest = manifest_is_consistent(out)
    assert manifest["command"] == "fig1"
    assert manifest["config"]["fig1"]["alpha"] == 0.5


def test_fig2_outputs_single_photon_curves(tmp_path):
    code, out = run_cli(tmp_path, "fig2")
    assert code == EXIT_OK
    rows = read_csv(out / "fig2.csv")
    first = rows[0]
    assert float(first["x"]) == 0.0 and float(first["p1_wcs"]) == 0.0
    at = {round(float(r["x"]), 6): r for r in rows}
    assert float(at[0.05]["p1_hsps"]) > float(at[0.05]["p1_wcs"])
    summary = json.loads((out / "fig2_summary.json").read_text())
    assert 0.45 <= summary["crossover_mean"] <= 0.75
    manifest_is_consistent(out)


def test_fig2_documents_impossible_heralding_row(tmp_path):
    code, out = run_cli(tmp_path, "fig2", {"sources": {"HSPS": {"herald_dark": 0.0}}})
    assert code == EXIT_OK
    first = read_csv(out / "fig2.csv")[0]
    assert first["x"] == "0" and first["p1_hsps"] == ""


def test_fig3_outputs_regimes_and_spread(tmp_path):
    code, out = run_cli(tmp_path, "fig3")
    assert code == EXIT_OK
    for name in ("fig3a.csv", "fig3b.csv"):
        rows = read_csv(out / name)
        assert len(rows) == 2 * 3 * 21
        for kind in ("WCS", "HSPS"):
            for mu in {r["mu"] for r in rows}:
                rates = [float(r["rate"]) for r in rows if r["source"] == kind and r["mu"] == mu]
                assert all(b <= a for a, b in zip(rates, rates[1:]))
    spread = read_csv(out / "fig3_spread.csv")
    assert {r["regime"] for r in spread} == {"a", "b"}
    ratios = json.loads((out / "fig3_summary.json").read_text())["regimes"]["a"]["hsps_over_wcs_best_rate"]
    by_loss = {e["loss_db"]: e["hsps_over_wcs"] for e in ratios}
    assert by_loss[30.0] > by_loss[10.0]
    manifest_is_consistent(out)


def test_fig3_rejects_empty_loss_list(tmp_path):
    code, out = run_cli(tmp_path, "fig3", {"fig3": {"loss_points": []}})
    assert code == EXIT_CONFIG
    assert not out.exists()


def test_fig3_rejects_mu_below_its_decoy(tmp_path):
    payload = {"fig3": {"regimes": {"a": {"mu_points": [0.05], "decoys": [0.1, 0.0]}}}}
    code, _ = run_cli(tmp_path, "fig3", payload)
    assert code == EXIT_CONFIG


def test_simulate_single_clear_pixel(tmp_path):
    scene = tmp_path / "scene.csv"
    scene.write_text("0.0\n")
    payload = {"simulate": {"scene_path": str(scene)}, "channel": {"loss_db": 0.0}}
    code, out = run_cli(tmp_path, "simulate", payload)
    assert code == EXIT_OK
    rows = read_csv(out / "simulate_pixels.csv")
    assert len(rows) == 1 and abs(float(rows[0]["alpha_est"])) < 0.1
    summary = json.loads((out / "simulate_summary.json").read_text())
    assert summary["eavesdrop_flag"] is False
    manifest_is_consistent(out)


def test_simulate_flags_an_eavesdropper(tmp_path):
    code, out = run_cli(tmp_path, "simulate", {"simulate": {"eavesdropper": True}})
    assert code == EXIT_OK
    summary = json.loads((out / "simulate_summary.json").read_text())
    assert summary["eavesdrop_flag"] is True
    assert summary["qber_measured"] == pytest.approx(0.25, abs=0.02)


def test_simulate_reports_unreadable_scene_as_io_error(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "scene.csv"
    code, _ = run_cli(tmp_path, "simulate", {"simulate": {"scene_path": str(missing)}})
    assert code == EXIT_IO
    assert str(missing) in capsys.readouterr().err


def test_seed_flag_overrides_config(tmp_path):
    _, a = run_cli(tmp_path, "simulate", {"simulate": {"width": 2, "height": 2}}, out="a", seed=5)
    _, b = run_cli(tmp_path, "simulate", {"simulate": {"width": 2, "height": 2}, "seed": 5}, out="b")
    _, c = run_cli(tmp_path, "simulate", {"simulate": {"width": 2, "height": 2}}, out="c", seed=6)
    pixels = lambda d: (d / "simulate_pixels.csv").read_bytes()  # noqa: E731
    assert pixels(a) == pixels(b) != pixels(c)
    assert json.loads((a / "manifest.json").read_text())["config"]["seed"] == 5


def test_optimize_reports_both_sources(tmp_path):
    code, out = run_cli(tmp_path, "optimize")
    assert code == EXIT_OK
    report = json.loads((out / "optimum.json").read_text())["sources"]
    for kind in ("WCS", "HSPS"):
        assert report[kind]["rate_star"] > 0
        assert set(report[kind]) >= {"mu_star", "rate_star", "max_loss_db", "throughput_bps"}
    assert report["WCS"]["throughput_bps"] > report["HSPS"]["throughput_bps"]


def test_optimize_reports_loss_beyond_cap(tmp_path):
    code, out = run_cli(tmp_path, "optimize", {"channel": {"y0": 0.0, "e_det": 0.0}})
    assert code == EXIT_OK
    report = json.loads((out / "optimum.json").read_text())["sources"]
    assert report["WCS"]["max_loss_db"] == ">60"


def test_optimize_infeasible_report_has_distinct_exit_code(tmp_path):
    code, out = run_cli(tmp_path, "optimize", {"optimize": {"rate_floor": 0.9}})
    assert code == EXIT_INFEASIBLE and EXIT_INFEASIBLE not in (EXIT_OK, EXIT_CONFIG, EXIT_IO)
    report = json.loads((out / "optimum.json").read_text())["sources"]
    assert report["WCS"]["infeasible"] is True and report["WCS"]["reason"]


def test_output_formats_filter_tables(tmp_path):
    code, out = run_cli(tmp_path, "fig2", {"output_formats": ["json"]})
    assert code == EXIT_OK
    assert not (out / "fig2.csv").exists() and (out / "fig2_summary.json").exists()


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["fig1", "--out", str(blocker / "sub")]) == EXIT_IO


def test_config_error_exit_code(tmp_path):
    bad = write_config(tmp_path, {"fig1": {"steps": 1}})
    assert main(["fig1", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_config_file_is_config_error(tmp_path):
    assert main(["fig1", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


@pytest.mark.parametrize("command", ["fig1", "fig2", "simulate", "optimize"])
def test_identical_runs_are_byte_identical(tmp_path, command):
    payload = {"simulate": {"width": 3, "height": 3, "pulses_per_pixel": 2000}}
    _, a = run_cli(tmp_path, command, payload, out="a")
    _, b = run_cli(tmp_path, command, payload, out="b")
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_thread_cap_does_not_change_outputs(tmp_path, monkeypatch):
    payload = {"simulate": {"width": 4, "height": 4, "pulses_per_pixel": 2000}}
    monkeypatch.setenv("QSI_THREADS", "1")
    _, a = run_cli(tmp_path, "simulate", payload, out="a")
    monkeypatch.setenv("QSI_THREADS", "3")
    _, b = run_cli(tmp_path, "simulate", payload, out="b")
    assert (a / "simulate_pixels.csv").read_bytes() == (b / "simulate_pixels.csv").read_bytes()


def test_float_fields_round_trip_exactly(tmp_path):
    _, out = run_cli(tmp_path, "fig1")
    row = read_csv(out / "fig1.csv")[5]
    value = float(row["delta_alpha"])
    assert repr(value) == repr(float(format(value, ".17g")))
    assert math.isfinite(value)
