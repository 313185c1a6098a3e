"""Image round trips, artifact writers, and the command-line entry point."""

import json

import numpy as np
import pytest

from ottv.cli_io import (
    RESIDUAL_OFFSET,
    RunManifest,
    load_image,
    run_cli,
    save_image,
    write_metrics,
    write_trace,
)
from ottv.grid import ScalarField
from ottv.trace import ConvergenceTrace

from oracles import disc_image


def write_disc_pgm(path, n=24, radius=8, contrast=0.6):
    img, _ = disc_image(n, radius, contrast)
    save_image(ScalarField(img, h=1.0), path)
    return path


# ---------------------------------------------------------------------------
# images

def test_pgm_binary_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    field = ScalarField(rng.uniform(0.0, 1.0, (16, 16)), h=1.0)
    path = tmp_path / "img.pgm"
    save_image(field, path)
    back = load_image(path)
    quantized = np.floor(np.clip(field.data, 0.0, 1.0) * 255.0 + 0.5) / 255.0
    assert np.allclose(back.data, quantized, atol=1e-12)
    # a second save of the loaded image reproduces the bytes exactly
    again = tmp_path / "img2.pgm"
    save_image(back, again)
    assert path.read_bytes() == again.read_bytes()


def test_pgm_ascii_parsing_with_comments(tmp_path):
    text = "P2\n# a comment line\n2 2\n255\n0 128\n# another\n255 64\n"
    path = tmp_path / "ascii.pgm"
    path.write_text(text)
    field = load_image(path)
    expected = np.array([[0.0, 128.0], [255.0, 64.0]]) / 255.0
    assert np.allclose(field.data, expected, atol=1e-12)


def test_png_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(1)
    field = ScalarField(rng.uniform(0.0, 1.0, (12, 12)), h=1.0)
    path = tmp_path / "img.png"
    save_image(field, path)
    back = load_image(path)
    quantized = np.floor(np.clip(field.data, 0.0, 1.0) * 255.0 + 0.5) / 255.0
    assert np.allclose(back.data, quantized, atol=1e-12)


def test_quantization_rounds_half_up_and_clamps(tmp_path):
    field = ScalarField(np.full((2, 2), 0.5), h=1.0)
    path = tmp_path / "half.pgm"
    save_image(field, path)
    raw = path.read_bytes()
    assert raw.endswith(bytes([128, 128, 128, 128]))
    save_image(ScalarField(np.full((2, 2), 1.2), h=1.0), path)
    assert path.read_bytes().endswith(bytes([255] * 4))
    save_image(ScalarField(np.full((2, 2), -0.3), h=1.0), path)
    assert path.read_bytes().endswith(bytes([0] * 4))


def test_residual_offset_maps_zero_to_gray(tmp_path):
    field = ScalarField(np.zeros((2, 2)), h=1.0)
    path = tmp_path / "gray.pgm"
    save_image(field, path, offset=RESIDUAL_OFFSET)
    assert path.read_bytes().endswith(bytes([100] * 4))


def test_image_errors(tmp_path):
    with pytest.raises(OSError):
        load_image(tmp_path / "missing.pgm")
    bad = tmp_path / "img.tiff"
    with pytest.raises(ValueError):
        save_image(ScalarField(np.zeros((4, 4)), h=1.0), bad)
    rect = tmp_path / "rect.pgm"
    rect.write_text("P2\n2 3\n255\n0 0 0 0 0 0\n")
    with pytest.raises(ValueError):
        load_image(rect)


def test_save_failure_leaves_no_partial_file(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    target = blocker / "img.pgm"
    with pytest.raises(OSError):
        save_image(ScalarField(np.zeros((4, 4)), h=1.0), target)
    assert not target.exists()
    assert list(tmp_path.iterdir()) == [blocker]


# ---------------------------------------------------------------------------
# traces, metrics, manifests

def test_trace_csv_round_trips_losslessly(tmp_path):
    trace = ConvergenceTrace(("iter", "value"))
    trace.append(1, 1.0 / 3.0)
    trace.append(2, 7.25e-11)
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode("ascii").splitlines()
    assert lines[0] == "iter,value"
    parsed = [float(line.split(",")[1]) for line in lines[1:]]
    assert parsed == [1.0 / 3.0, 7.25e-11]


def test_empty_trace_writes_header_only(tmp_path):
    trace = ConvergenceTrace(("iter", "residual"))
    path = tmp_path / "empty.csv"
    write_trace(trace, path)
    assert path.read_text() == "iter,residual\n"


def test_metrics_json_is_flat_sorted_and_null_safe(tmp_path):
    path = tmp_path / "metrics.json"
    write_metrics({"b": 2.0, "a": 1, "c": float("inf"), "name": "run"}, path)
    text = path.read_text()
    data = json.loads(text)
    assert data == {"a": 1, "b": 2.0, "c": None, "name": "run"}
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    with pytest.raises(ValueError):
        write_metrics({"nested": {"x": 1}}, path)


def test_manifest_bytes_are_deterministic(tmp_path):
    manifest = RunManifest(
        command="denoise",
        inputs=["in.pgm"],
        out_dir="out",
        parameters={"alpha": 10.0, "seed": 3},
        artifacts=["u.png"],
    )
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    manifest.write(p1)
    manifest.write(p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert json.loads(p1.read_text())["command"] == "denoise"


# ---------------------------------------------------------------------------
# command line

def test_cli_no_arguments_is_usage_error(capsys):
    assert run_cli([]) == 2
    capsys.readouterr()


def test_cli_help_exits_zero(capsys):
    assert run_cli(["--help"]) == 0
    out = capsys.readouterr().out
    assert "denoise" in out and "w1" in out


def test_cli_denoise_rof_writes_artifacts(tmp_path):
    source = write_disc_pgm(tmp_path / "disc.pgm")
    out = tmp_path / "out"
    code = run_cli([
        "denoise", str(source), "--model", "rof", "--alpha", "10",
        "--sigma", "0.1", "--seed", "3", "--out-dir", str(out),
    ])
    assert code == 0
    for name in ("observed.png", "u.png", "residual.png", "trace.csv",
                 "metrics.json", "manifest.json", "alm_trace.csv"):
        assert (out / name).exists(), name
    assert not (out / "texture.png").exists()
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["model"] == "rof"
    assert metrics["outer_iterations"] >= 1
    assert metrics["psnr_u"] > metrics["psnr_observed"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["artifacts"]) == {
        "observed.png", "u.png", "residual.png", "trace.csv",
        "metrics.json", "alm_trace.csv",
    }


def test_cli_decompose_emits_texture_channels(tmp_path):
    source = write_disc_pgm(tmp_path / "disc.pgm")
    out = tmp_path / "out"
    code = run_cli([
        "decompose", str(source), "--alpha", "10", "--lambda", "0.5",
        "--out-dir", str(out),
    ])
    assert code == 0
    for name in ("u.png", "texture.png", "remainder.png", "pdhg_trace.csv"):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics.json").read_text())
    assert "flux_norm" in metrics and "observed.png" not in metrics


def test_cli_runs_are_byte_deterministic(tmp_path):
    source = write_disc_pgm(tmp_path / "disc.pgm")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = run_cli([
            "denoise", str(source), "--alpha", "10", "--sigma", "0.1",
            "--seed", "7", "--out-dir", str(out),
        ])
        assert code == 0
        outs.append(out)
    for name in ("metrics.json", "u.png", "trace.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_cli_w1_identical_images_prints_zero(tmp_path, capsys):
    source = write_disc_pgm(tmp_path / "disc.pgm")
    assert run_cli(["w1", str(source), str(source)]) == 0
    assert float(capsys.readouterr().out.strip()) == 0.0


def test_cli_w1_dipole_distance(tmp_path, capsys):
    a = np.zeros((16, 16))
    b = np.zeros((16, 16))
    a[8, 6] = 1.0
    b[8, 10] = 1.0
    save_image(ScalarField(a, h=1.0), tmp_path / "a.pgm")
    save_image(ScalarField(b, h=1.0), tmp_path / "b.pgm")
    code = run_cli([
        "w1", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm"),
        "--tau", "4", "--eps", "1e-12",
    ])
    assert code == 0
    value = float(capsys.readouterr().out.strip())
    assert abs(value - 4.0) <= 0.04


def test_cli_missing_input_is_usage_error(tmp_path, capsys):
    code = run_cli(["denoise", str(tmp_path / "nope.pgm")])
    assert code == 2
    capsys.readouterr()


def test_cli_calibrate_without_target_or_sigma_is_usage_error(tmp_path, capsys):
    source = write_disc_pgm(tmp_path / "disc.pgm")
    code = run_cli(["calibrate", str(source), "--out-dir", str(tmp_path / "o")])
    assert code == 2
    capsys.readouterr()


def test_cli_calibrate_unreachable_target_is_numerical_failure(tmp_path, capsys):
    source = write_disc_pgm(tmp_path / "disc.pgm")
    code = run_cli([
        "calibrate", str(source), "--model", "rof", "--target", "1e6",
        "--out-dir", str(tmp_path / "o"),
    ])
    assert code == 1
    capsys.readouterr()


def test_cli_calibrate_writes_calibration_metrics(tmp_path):
    source = write_disc_pgm(tmp_path / "disc.pgm")
    out = tmp_path / "out"
    code = run_cli([
        "calibrate", str(source), "--model", "rof", "--sigma", "0.1",
        "--seed", "5", "--out-dir", str(out),
    ])
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    target = metrics["calibration_target"]
    assert abs(metrics["calibration_residual"] - target) <= 0.01 * target
    assert metrics["calibration_evaluations"] >= 1
    assert metrics["calibrated_alpha"] > 0.0
