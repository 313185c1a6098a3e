"""Image and trace I/O plus the command-line surface.

Images move through the pipeline as unit-range float fields: loading divides
8-bit samples by the file's maxval, saving clamps to [0, 1], scales by 255,
and rounds half up.  Every file write goes through a temp file in the target
directory followed by an atomic rename, so output files are never partially
written.  Runs are described by a manifest (command, inputs, parameters,
artifact list) whose JSON is deterministic; re-running a manifest with the
same seed reproduces every output byte for byte.

Exit codes: 0 success, 1 numerical failure (divergence, failed calibration),
2 usage error (bad flags, unreadable or unsupported input).
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .grid import ScalarField, convolve, gaussian_kernel
from .restore import (
    CalibrationError,
    ModelSpec,
    SolveOptions,
    add_gaussian_noise,
    calibrate_residual_norm,
    psnr,
    restore,
)
from .trace import ConvergenceTrace
from .w1 import DivergenceError, PdhgConfig, w1_distance

__all__ = [
    "load_image",
    "save_image",
    "write_trace",
    "write_metrics",
    "RunManifest",
    "run_cli",
    "main",
]

RESIDUAL_OFFSET = 100.0 / 255.0  # display offset for signed residual images


# ---------------------------------------------------------------------------
# atomic file primitives

def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# ---------------------------------------------------------------------------
# images

def _parse_pgm(raw: bytes, path: Path) -> np.ndarray:
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            c = raw[pos : pos + 1]
            if c == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        return raw[start:pos]

    magic = token()
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    width, height, maxval = int(token()), int(token()), int(token())
    if not (1 <= maxval <= 255):
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval {maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
        if pixels.size != width * height:
            raise ValueError(f"{path}: truncated PGM raster")
    else:
        body = b"\n".join(
            line.split(b"#", 1)[0] for line in raw[pos:].split(b"\n")
        )
        values = body.split()
        if len(values) < width * height:
            raise ValueError(f"{path}: truncated PGM raster")
        pixels = np.array(values[: width * height], dtype=np.int64)
        if pixels.min() < 0 or pixels.max() > maxval:
            raise ValueError(f"{path}: sample out of range")
    return pixels.reshape(height, width).astype(np.float64) / maxval


def load_image(path: str | os.PathLike) -> ScalarField:
    """Read an 8-bit grayscale PGM (P2/P5) or PNG as a unit-range field."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".pgm":
        data = _parse_pgm(p.read_bytes(), p)
    elif suffix == ".png":
        with Image.open(p) as img:
            if img.mode != "L":
                raise ValueError(f"{p}: PNG mode {img.mode!r}; only 8-bit grayscale")
            data = np.asarray(img, dtype=np.float64) / 255.0
    else:
        raise ValueError(f"{p}: unsupported format {suffix!r}; use .pgm or .png")
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise ValueError(f"{p}: image must be square, got {data.shape}")
    return ScalarField(data)


def _quantize(field: ScalarField, offset: float) -> np.ndarray:
    scaled = np.clip(field.data + offset, 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)  # round half up


def save_image(field: ScalarField, path: str | os.PathLike, offset: float = 0.0) -> None:
    """Write a field as 8-bit grayscale, format chosen by extension."""
    p = Path(path)
    pixels = _quantize(field, offset)
    suffix = p.suffix.lower()
    if suffix == ".pgm":
        header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
        _atomic_write_bytes(p, header + pixels.tobytes())
    elif suffix == ".png":
        buf = io.BytesIO()
        Image.fromarray(pixels, mode="L").save(buf, format="PNG")
        _atomic_write_bytes(p, buf.getvalue())
    else:
        raise ValueError(f"{p}: unsupported format {suffix!r}; use .pgm or .png")


# ---------------------------------------------------------------------------
# traces, metrics, manifest

def write_trace(trace: ConvergenceTrace, path: str | os.PathLike) -> None:
    """CSV with a header row, LF endings, 17 significant digits."""
    lines = [",".join(trace.columns)]
    for row in trace.rows:
        lines.append(",".join(f"{value:.17g}" for value in row))
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("ascii"))


def write_metrics(metrics: dict, path: str | os.PathLike) -> None:
    """Flat JSON object with sorted keys; non-finite numbers become null."""
    clean: dict = {}
    for key, value in metrics.items():
        if isinstance(value, dict | list | tuple):
            raise ValueError(f"metrics must be flat; {key!r} holds {type(value).__name__}")
        if isinstance(value, float) and not math.isfinite(value):
            value = None
        clean[key] = value
    payload = json.dumps(clean, sort_keys=True, indent=2, allow_nan=False) + "\n"
    _atomic_write_bytes(Path(path), payload.encode("ascii"))


@dataclass
class RunManifest:
    """What a CLI run consumed and produced, in deterministic JSON."""

    command: str
    inputs: list[str]
    out_dir: str
    parameters: dict
    artifacts: list[str] = field(default_factory=list)

    def write(self, path: str | os.PathLike) -> None:
        payload = json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"
        _atomic_write_bytes(Path(path), payload.encode("ascii"))


# ---------------------------------------------------------------------------
# command-line interface

def _add_solver_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--model", choices=("ottv", "rof", "mtv"), default="ottv")
    sp.add_argument("--alpha", type=float, default=50.0, help="fidelity weight")
    sp.add_argument("--lambda", dest="lam", type=float, default=1.0,
                    help="transport weight (ottv model)")
    sp.add_argument("--tau", type=float, default=1.0, help="dual step size")
    sp.add_argument("--r", type=float, default=None, help="splitting weight")
    sp.add_argument("--a", type=float, default=None,
                    help="log-tempered penalty threshold (mtv)")
    sp.add_argument("--eps", type=float, default=None,
                    help="inner transport-solver stop threshold")
    sp.add_argument("--max-outer", type=int, default=30)
    sp.add_argument("--tol-outer", type=float, default=1e-4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", default="ottv_out")


def _spec_from_args(ns: argparse.Namespace, kernel=None) -> ModelSpec:
    return ModelSpec(
        variant=ns.model,
        fidelity_alpha=ns.alpha,
        transport_lambda=ns.lam,
        mtv_a=ns.a,
        kernel=kernel,
    )


def _opts_from_args(ns: argparse.Namespace) -> SolveOptions:
    return SolveOptions(
        max_outer=ns.max_outer,
        tol_outer=ns.tol_outer,
        pdhg_tau=ns.tau,
        pdhg_eps=ns.eps,
        alm_r=ns.r,
    )


def _flat_params(ns: argparse.Namespace, skip=("func", "out_dir")) -> dict:
    return {k: v for k, v in sorted(vars(ns).items()) if k not in skip}


def _restoration_command(ns: argparse.Namespace, command: str) -> int:
    out = Path(ns.out_dir)
    clean = load_image(ns.input)
    n = clean.n
    kernel = None
    observed = clean
    artifacts: list[str] = []
    metrics: dict = {"command": command, "n": n, "model": ns.model,
                     "alpha": ns.alpha, "lambda": ns.lam, "seed": ns.seed}

    if command == "deblur":
        kernel = gaussian_kernel(n, ns.blur_sigma, ns.blur_radius)
        observed = convolve(kernel, observed)
        metrics["blur_sigma"] = ns.blur_sigma
    sigma = getattr(ns, "sigma", 0.0)
    synthesized = command == "deblur" or sigma > 0.0
    if sigma > 0.0:
        observed = add_gaussian_noise(observed, sigma, ns.seed)
        metrics["sigma"] = sigma

    spec = _spec_from_args(ns, kernel)
    opts = _opts_from_args(ns)

    if command == "calibrate":
        target = ns.target if ns.target is not None else n * sigma
        result = calibrate_residual_norm(observed, spec, target, knob=ns.knob)
        spec = result.spec
        d = result.decomposition
        metrics["calibration_target"] = target
        metrics["calibration_residual"] = result.residual
        metrics["calibration_evaluations"] = result.evaluations
        metrics["calibrated_alpha"] = spec.fidelity_alpha
        metrics["calibrated_lambda"] = spec.transport_lambda
    else:
        d = restore(observed, spec, opts)

    ku = d.u.data if kernel is None else convolve(kernel, d.u).data
    residual = observed.with_data(observed.data - ku)
    if synthesized:
        save_image(observed, out / "observed.png")
        artifacts.append("observed.png")
        metrics["psnr_observed"] = psnr(observed, clean)
        metrics["psnr_u"] = psnr(d.u, clean)
    save_image(d.u, out / "u.png")
    save_image(residual, out / "residual.png", offset=RESIDUAL_OFFSET)
    artifacts += ["u.png", "residual.png"]
    if spec.variant == "ottv":
        save_image(d.v, out / "texture.png", offset=RESIDUAL_OFFSET)
        save_image(d.w, out / "remainder.png", offset=RESIDUAL_OFFSET)
        artifacts += ["texture.png", "remainder.png"]
        metrics["flux_norm"] = d.flux_norm
        metrics["transport_gap"] = d.transport_gap
    write_trace(d.outer_trace, out / "trace.csv")
    artifacts.append("trace.csv")
    if d.alm_trace is not None:
        write_trace(d.alm_trace, out / "alm_trace.csv")
        artifacts.append("alm_trace.csv")
    if d.pdhg_trace is not None:
        write_trace(d.pdhg_trace, out / "pdhg_trace.csv")
        artifacts.append("pdhg_trace.csv")

    metrics["outer_iterations"] = d.outer_iterations
    metrics["energy"] = d.energy
    metrics["residual_norm"] = float(np.linalg.norm(residual.data))
    write_metrics(metrics, out / "metrics.json")
    artifacts.append("metrics.json")
    manifest = RunManifest(
        command=command,
        inputs=[str(ns.input)],
        out_dir=str(out),
        parameters=_flat_params(ns),
        artifacts=sorted(artifacts),
    )
    manifest.write(out / "manifest.json")
    print(f"{command}: wrote {len(artifacts) + 1} artifacts to {out}")
    return 0


def _cmd_denoise(ns) -> int:
    return _restoration_command(ns, "denoise")


def _cmd_decompose(ns) -> int:
    return _restoration_command(ns, "decompose")


def _cmd_deblur(ns) -> int:
    return _restoration_command(ns, "deblur")


def _cmd_calibrate(ns) -> int:
    if ns.target is None and ns.sigma <= 0.0:
        raise ValueError("calibrate needs --target or a positive --sigma")
    return _restoration_command(ns, "calibrate")


def _cmd_w1(ns) -> int:
    a = load_image(ns.image_a)
    b = load_image(ns.image_b)
    mass_a, mass_b = float(a.data.sum()), float(b.data.sum())
    if mass_a <= 0.0 or mass_b <= 0.0:
        raise ValueError("w1 needs images with positive total mass")
    cfg = PdhgConfig(tau=ns.tau, eps=ns.eps, max_iters=ns.max_iters)
    value = w1_distance(
        ScalarField(a.data / mass_a), ScalarField(b.data / mass_b), cfg
    )
    print(f"{value:.17g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ottv",
        description="Cartoon-texture restoration with a transport-cost "
        "texture fidelity.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, extra in (
        ("denoise", _cmd_denoise, "restore a noisy image (or synthesize noise "
                                  "from a clean one with --sigma)"),
        ("decompose", _cmd_decompose, "split an image into cartoon, texture, "
                                      "and remainder parts"),
        ("deblur", _cmd_deblur, "synthesize Gaussian blur (plus optional "
                                "noise) and restore"),
        ("calibrate", _cmd_calibrate, "tune alpha or lambda until "
                                      "||f - K*u|| matches a target"),
    ):
        sp = sub.add_parser(name, help=extra)
        sp.add_argument("input")
        _add_solver_flags(sp)
        if name != "decompose":
            sp.add_argument("--sigma", type=float, default=0.0,
                            help="noise level to synthesize")
        if name == "deblur":
            sp.add_argument("--blur-sigma", type=float, default=1.6)
            sp.add_argument("--blur-radius", type=int, default=12)
        if name == "calibrate":
            sp.add_argument("--target", type=float, default=None,
                            help="residual norm target (default n * sigma)")
            sp.add_argument("--knob", choices=("alpha", "lambda"),
                            default="alpha")
        sp.set_defaults(func=func)

    w1p = sub.add_parser(
        "w1",
        help="transport distance between two images, each normalized to "
        "unit mass first",
    )
    w1p.add_argument("image_a")
    w1p.add_argument("image_b")
    w1p.add_argument("--tau", type=float, default=1.0)
    w1p.add_argument("--eps", type=float, default=None)
    w1p.add_argument("--max-iters", type=int, default=20000)
    w1p.set_defaults(func=_cmd_w1)
    return parser


def run_cli(argv: list[str] | None = None) -> int:
    """Parse and run one command; returns the process exit code."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return 0 if exc.code in (0, None) else 2
    try:
        return ns.func(ns)
    except (DivergenceError, CalibrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
