"""Command-line runner: psf | simulate | reconstruct | analyze | metrics.

Configs are JSON with explicit unit suffixes on physical quantities
(``_m`` canonical; ``_nm`` / ``_um`` / ``_mm`` converted on load).  Unknown
keys are rejected with their field path.  Every run writes
``resolved_config.json`` (the normalized config plus the effective seed),
which is sufficient to replay the run byte for byte.

Exit codes: 0 success, 2 configuration/data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import _fft, analysis, cube_io, forward, optics, recon_admm, recon_hqs
from .errors import ConfigError, DomainError, FormatError, SolverError

_UNIT_SCALES = {"_m": 1.0, "_mm": 1e-3, "_um": 1e-6, "_nm": 1e-9}


def _unit_variants(canonical: str):
    base = canonical[: -len("_m")]
    return {base + suffix: scale for suffix, scale in _UNIT_SCALES.items()}


class _Field:
    def __init__(self, kind, default=None, required=False, choices=None, allow_infinity=False):
        self.kind = kind  # "length", "length_list", "float", "int", "bool", "str",
        #                   "float_list", "int_list", "str_list", "section"
        self.default = default
        self.required = required
        self.choices = choices
        self.allow_infinity = allow_infinity


def _length(value, path, allow_infinity=False):
    if value == "infinity":
        if allow_infinity:
            return math.inf
        raise ConfigError("infinity is not allowed here", path)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError("expected a number", path)
    return float(value)


def _normalize(section: dict, schema: dict, path: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError("expected an object", path or "<root>")
    out = {}
    consumed = set()
    for key, fld in schema.items():
        label = f"{path}.{key}" if path else key
        if fld.kind == "section":
            raw = section.get(key, {})
            consumed.add(key)
            out[key] = _normalize(raw, fld.default, label)
            continue
        if fld.kind in ("length", "length_list"):
            hits = [
                (k, s)
                for k, s in _unit_variants(key).items()
                if section.get(k) is not None
            ]
            consumed.update(k for k in _unit_variants(key) if k in section)
            if len(hits) > 1:
                raise ConfigError(f"give {key} in exactly one unit", label)
            if not hits:
                if fld.required:
                    raise ConfigError("missing required field", label)
                out[key] = fld.default
                continue
            raw_key, scale = hits[0]
            raw = section[raw_key]
            if fld.kind == "length":
                val = _length(raw, f"{path}.{raw_key}" if path else raw_key, fld.allow_infinity)
                out[key] = val if math.isinf(val) else val * scale
            else:
                if not isinstance(raw, list) or not raw:
                    raise ConfigError("expected a non-empty list", raw_key)
                out[key] = [_length(v, raw_key) * scale for v in raw]
            continue
        consumed.add(key)
        if section.get(key) is None:  # null round-trips as "use the default"
            if fld.required:
                raise ConfigError("missing required field", label)
            out[key] = fld.default
            continue
        raw = section[key]
        if fld.kind == "float":
            if raw == "infinity":
                if not fld.allow_infinity:
                    raise ConfigError("infinity is not allowed here", label)
                out[key] = math.inf
                continue
            if raw is None or isinstance(raw, bool) or not isinstance(raw, (int, float)):
                raise ConfigError("expected a number", label)
            out[key] = float(raw)
        elif fld.kind == "int":
            if isinstance(raw, bool) or not isinstance(raw, int):
                raise ConfigError("expected an integer", label)
            out[key] = raw
        elif fld.kind == "bool":
            if not isinstance(raw, bool):
                raise ConfigError("expected a boolean", label)
            out[key] = raw
        elif fld.kind == "str":
            if not isinstance(raw, str):
                raise ConfigError("expected a string", label)
            if fld.choices and raw not in fld.choices:
                raise ConfigError(f"expected one of {sorted(fld.choices)}", label)
            out[key] = raw
        elif fld.kind == "float_list":
            if not isinstance(raw, list):
                raise ConfigError("expected a list", label)
            out[key] = [float(v) for v in raw]
        elif fld.kind == "int_list":
            if not isinstance(raw, list):
                raise ConfigError("expected a list", label)
            out[key] = [int(v) for v in raw]
        elif fld.kind == "str_list":
            if not isinstance(raw, list):
                raise ConfigError("expected a list", label)
            out[key] = [str(v) for v in raw]
        elif fld.kind == "float_or_null":
            if raw is None:
                out[key] = None
            elif isinstance(raw, bool) or not isinstance(raw, (int, float)):
                raise ConfigError("expected a number or null", label)
            else:
                out[key] = float(raw)
        else:  # pragma: no cover
            raise ConfigError(f"unhandled schema kind {fld.kind}", label)
    unknown = set(section) - consumed
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError("unknown key", f"{path}.{name}" if path else name)
    return out


_DENOISER_SCHEMA = {
    "kind": _Field("str", default="tv_chambolle", choices=set(recon_hqs.DENOISER_KINDS)),
    "strength": _Field("float", default=0.05),
    "threshold": _Field("float", default=0.01),
    "haar_levels": _Field("int", default=3),
    "chambolle_iters": _Field("int", default=20),
    "chambolle_step": _Field("float", default=0.249),
    "table_path": _Field("str", default=None),
}

_SCHEMA = {
    "lens": _Field("section", default={
        "outer_diameter_m": _Field("length", required=True),
        "smallest_hole_m": _Field("length", required=True),
        "label": _Field("str", default="lens"),
    }),
    "wavelengths_m": _Field("length_list", required=True),
    "geometry": _Field("section", default={
        "mode": _Field("str", default="MD", choices={"MD", "FD"}),
        "object_distance_m": _Field("length", default=math.inf, allow_infinity=True),
        "planes_m": _Field("length_list", default=None),
        "fixed_plane_m": _Field("length", default=None),
    }),
    "grid": _Field("section", default={
        "size": _Field("int", required=True),
        "pixel_pitch_m": _Field("length", required=True),
    }),
    "psf_model": _Field("str", default="approx", choices={"approx", "exact"}),
    "noise": _Field("section", default={
        "snr_db": _Field("float", default=math.inf, allow_infinity=True),
        "per_frame": _Field("bool", default=True),
    }),
    "recon": _Field("section", default={
        "method": _Field("str", default="admm", choices={"admm", "hqs"}),
        "prior": _Field("str", default="tv_isotropic", choices=set(recon_admm.PRIORS)),
        "epsilon": _Field("float_or_null", default=None),
        "epsilon_factor": _Field("float", default=1.0),
        "mu": _Field("float", default=1.0),
        "max_iters": _Field("int", default=200),
        "tol_primal": _Field("float", default=1e-4),
        "tol_dual": _Field("float", default=1e-4),
        "chambolle_iters": _Field("int", default=20),
        "chambolle_step": _Field("float", default=0.249),
        "haar_levels": _Field("int", default=3),
        "nu": _Field("float", default=0.5),
        "iterations": _Field("int", default=20),
        "denoiser": _Field("section", default=_DENOISER_SCHEMA),
    }),
    "analysis": _Field("section", default={
        "selector": _Field("str", default="conditioning",
                           choices={"conditioning", "resolution", "misplacement", "settings"}),
        "bands": _Field("int_list", default=[0, 1, 2]),
        "counts": _Field("int_list", default=[2, 4, 16]),
        "spacings_m": _Field("length_list", default=None),
        "spacing_m": _Field("length", default=5e-6),
        "snr_db": _Field("float", default=25.0),
        "method": _Field("str", default="admm", choices={"admm", "hqs"}),
        "dmax_grid_m": _Field("length_list", default=None),
        "trials": _Field("int", default=20),
        "kp_list": _Field("int_list", default=[2, 3, 4]),
        "snr_list": _Field("float_list", default=[15.0, 20.0, 25.0, 30.0]),
        "settings": _Field("str_list", default=["MD", "FD"]),
        "wavelength_pool_m": _Field("length_list", default=None),
    }),
    "truth_cube": _Field("str", default=None),
    "seed": _Field("int", default=0),
    "output_dir": _Field("str", default="."),
}


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return _normalize(raw, _SCHEMA, "")


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, float):
        if math.isinf(obj):
            return "infinity" if obj > 0 else "-infinity"
        return obj
    return obj


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_ready(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _snapshot(config: dict, out_dir: Path) -> None:
    _write_json(out_dir / "resolved_config.json", config)


# ---------------------------------------------------------------------------
# Builders shared by the commands
# ---------------------------------------------------------------------------


def _lens(config) -> optics.DiffractiveLensSpec:
    lens = config["lens"]
    return optics.DiffractiveLensSpec(
        outer_diameter_m=lens["outer_diameter_m"],
        smallest_hole_m=lens["smallest_hole_m"],
        label=lens["label"],
    )


def _scenario(config):
    lens = _lens(config)
    geo = config["geometry"]
    wavelengths = config["wavelengths_m"]
    if geo["mode"] == "MD":
        return forward.md_geometries(
            lens, wavelengths, planes_m=geo["planes_m"], object_distance_m=geo["object_distance_m"]
        )
    return forward.fd_geometries(
        lens, wavelengths, fixed_plane_m=geo["fixed_plane_m"],
        object_distance_m=geo["object_distance_m"],
    )


def _bank(config) -> forward.PsfBank:
    return forward.build_bank(
        _scenario(config),
        config["wavelengths_m"],
        config["grid"]["size"],
        config["grid"]["pixel_pitch_m"],
        model=config["psf_model"],
    )


def _recon_configs(config):
    rc = config["recon"]
    admm_cfg = recon_admm.ReconConfig(
        prior=rc["prior"],
        epsilon=rc["epsilon"],
        epsilon_factor=rc["epsilon_factor"],
        mu=rc["mu"],
        max_iters=rc["max_iters"],
        tol_primal=rc["tol_primal"],
        tol_dual=rc["tol_dual"],
        chambolle_iters=rc["chambolle_iters"],
        chambolle_step=rc["chambolle_step"],
        haar_levels=rc["haar_levels"],
    )
    dn = rc["denoiser"]
    table = ()
    if dn["table_path"] is not None:
        with np.load(dn["table_path"]) as data:
            count = len(data.files) // 2
            table = tuple((data[f"in_{i}"], data[f"out_{i}"]) for i in range(count))
    handle = recon_hqs.DenoiserHandle(
        kind=dn["kind"],
        strength=dn["strength"],
        threshold=dn["threshold"],
        haar_levels=dn["haar_levels"],
        chambolle_iters=dn["chambolle_iters"],
        chambolle_step=dn["chambolle_step"],
        table=table,
    )
    hqs_cfg = recon_hqs.HqsConfig(nu=rc["nu"], iterations=rc["iterations"], denoiser=handle)
    return admm_cfg, hqs_cfg


def _write_trace(path, trace, timings: bool) -> None:
    rows = []
    for row in trace:
        t = row.as_tuple()
        rows.append(t if timings else t[:-1] + (0.0,))
    cube_io.write_csv(path, recon_admm.TRACE_HEADER, rows)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_psf(config, out_dir: Path, timings: bool) -> int:
    bank = _bank(config)
    k, p = bank.num_frames, bank.num_bands
    stack = np.stack([bank.psfs[i][j].samples for i in range(k) for j in range(p)])
    meta = [bank.wavelengths_m[j] for i in range(k) for j in range(p)]
    cube_io.write_psf_stack(stack, meta, bank.pixel_pitch_m, out_dir / "psf_bank.bin")
    lens = _lens(config)
    summary = {
        "grid_size": bank.grid_size,
        "pixel_pitch_m": bank.pixel_pitch_m,
        "focal_lengths_m": [optics.focal_length(lens, w) for w in bank.wavelengths_m],
        "spectral_bandwidths_m": [optics.spectral_bandwidth(lens, w) for w in bank.wavelengths_m],
        "frames": [],
    }
    for i, geom in enumerate(bank.geometries):
        frame = {
            "measurement_distance_m": geom.measurement_distance_m,
            "lens_outer_diameter_m": geom.lens.outer_diameter_m,
            "defocus_per_band": [geom.defocus(w) for w in bank.wavelengths_m],
            "support_radius_px": [bank.psfs[i][j].support_radius_px for j in range(p)],
            "max_admissible_pitch_m": min(
                optics.max_admissible_pitch(geom, w) for w in bank.wavelengths_m
            ),
        }
        summary["frames"].append(frame)
    _write_json(out_dir / "psf_summary.json", summary)
    for i in range(k):
        for j in range(p):
            cube_io.write_pgm(bank.psfs[i][j].samples, out_dir / f"psf_k{i}_p{j}.pgm")
    return 0


def cmd_simulate(config, cube_path, out_dir: Path, timings: bool) -> int:
    cube = cube_io.read_cube(cube_path)
    bank = _bank(config)
    if cube.grid_size != bank.grid_size or cube.num_bands != bank.num_bands:
        raise DomainError(
            f"cube shape ({cube.num_bands}, {cube.grid_size}) does not match the "
            f"configured system ({bank.num_bands}, {bank.grid_size})"
        )
    support = max(g.support_radius_px for row in bank.psfs for g in row)
    if not cube_io.support_margin_ok(cube, support):
        print(
            "warning: scene support exceeds the linear-convolution margin; "
            "the circular model will wrap content",
            file=sys.stderr,
        )
    spec = forward.NoiseSpec(
        snr_db=config["noise"]["snr_db"], seed=config["seed"],
        per_frame=config["noise"]["per_frame"],
    )
    mset = forward.simulate_measurements(bank, cube, spec)
    cube_io.write_measurements(mset, out_dir / "measurements.bin")
    for i in range(mset.num_frames):
        cube_io.write_pgm(mset.frames[i], out_dir / f"frame_{i}.pgm")
    return 0


def _metrics_rows(truth, recon_cube):
    metrics = cube_io.cube_metrics(truth, recon_cube)
    rows = [
        ("band_" + str(i), p, s)
        for i, (p, s) in enumerate(zip(metrics["per_band_psnr_db"], metrics["per_band_ssim"]))
    ]
    rows.append(("band_mean", metrics["mean_band_psnr_db"], metrics["ssim"]))
    rows.append(("cube", metrics["psnr_db"], metrics["ssim"]))
    return rows


def cmd_reconstruct(config, measurements_path, out_dir: Path, timings: bool) -> int:
    mset = cube_io.read_measurements(measurements_path)
    bank = _bank(config)
    admm_cfg, hqs_cfg = _recon_configs(config)
    if config["recon"]["method"] == "admm":
        result = recon_admm.admm_reconstruct(mset, bank, admm_cfg)
    else:
        result = recon_hqs.hqs_reconstruct(mset, bank, hqs_cfg)
    cube_io.write_cube(result.cube, out_dir / "reconstruction.bin")
    _write_trace(out_dir / "trace.csv", result.trace, timings)
    for i in range(result.cube.num_bands):
        cube_io.write_pgm(result.cube.bands[i], out_dir / f"recon_band_{i}.pgm")
    if config["truth_cube"] is not None:
        truth = cube_io.read_cube(config["truth_cube"])
        cube_io.write_csv(
            out_dir / "metrics.csv", ("target", "psnr_db", "ssim"), _metrics_rows(truth, result.cube)
        )
    return 0


def _analysis_spacings_um(config):
    spacings_m = config["analysis"]["spacings_m"]
    if spacings_m is None:
        return [float(s) for s in range(1, 21)]
    return [s * 1e6 for s in spacings_m]


def cmd_analyze(config, out_dir: Path, timings: bool) -> int:
    sel = config["analysis"]["selector"]
    seed = config["seed"]
    manifest = {"selector": sel, "seed": seed, "analysis": config["analysis"]}
    admm_cfg, hqs_cfg = _recon_configs(config)
    if sel == "conditioning":
        bank = _bank(config)
        report = analysis.conditioning_sweep(
            bank,
            bands=config["analysis"]["bands"],
            counts=config["analysis"]["counts"],
            spacings_um=_analysis_spacings_um(config),
        )
        cube_io.write_csv(
            out_dir / "conditioning.csv",
            ("band", "count", "spacing_um", "condition_number"),
            report.rows,
        )
    elif sel == "resolution":
        bank = _bank(config)
        field_um = bank.grid_size * bank.pixel_pitch_m * 1e6
        spacing_um = config["analysis"]["spacing_m"] * 1e6
        layout = analysis.standard_point_layout(spacing_um, field_um)
        spec = cube_io.PointSceneSpec(tuple(layout), bank.pixel_pitch_m * 1e6)
        result = analysis.resolution_experiment(
            spec, bank, config["analysis"]["snr_db"],
            recon=config["analysis"]["method"],
            recon_config=admm_cfg if config["analysis"]["method"] == "admm" else hqs_cfg,
            seed=seed,
        )
        rows = [
            (p.band, p.point_a[0], p.point_a[1], p.point_b[0], p.point_b[1],
             p.peak_a, p.peak_b, p.dip, p.resolved)
            for p in result.pairs
        ]
        cube_io.write_csv(
            out_dir / "resolution.csv",
            ("band", "row_a", "col_a", "row_b", "col_b", "peak_a", "peak_b", "dip", "resolved"),
            rows,
        )
        cube_io.write_cube(result.cube, out_dir / "resolution_recon.bin")
    elif sel == "misplacement":
        bank = _bank(config)
        scene = cube_io.make_phantom_cube(
            bank.wavelengths_m, bank.grid_size, bank.pixel_pitch_m, seed=seed
        )
        grid = config["analysis"]["dmax_grid_m"]
        if grid is None:
            grid = [0.0, 1e-3, 2e-3, 3e-3]
        report = analysis.misplacement_sensitivity(
            bank, scene, config["analysis"]["snr_db"], grid,
            trials=config["analysis"]["trials"], seed=seed, recon_config=admm_cfg,
        )
        cube_io.write_csv(
            out_dir / "misplacement.csv",
            ("dmax_m", "mean_psnr_db", "std_psnr_db", "mean_ssim", "std_ssim"),
            [(r.dmax_m, r.mean_psnr_db, r.std_psnr_db, r.mean_ssim, r.std_ssim)
             for r in report.rows],
        )
    elif sel == "settings":
        pool = config["analysis"]["wavelength_pool_m"]
        if pool is None:
            pool = config["wavelengths_m"]
        rows = analysis.setting_comparison(
            _lens(config), pool,
            kp_list=config["analysis"]["kp_list"],
            snr_list=config["analysis"]["snr_list"],
            grid_size=config["grid"]["size"],
            pixel_pitch_m=config["grid"]["pixel_pitch_m"],
            settings=tuple(config["analysis"]["settings"]),
            recon_config=admm_cfg,
            seed=seed,
        )
        cube_io.write_csv(
            out_dir / "settings.csv",
            ("setting", "K", "P", "snr_db", "psnr_db", "ssim"),
            [(r["setting"], r["K"], r["P"], r["snr_db"], r["psnr_db"], r["ssim"]) for r in rows],
        )
    else:  # pragma: no cover - schema rejects unknown selectors
        raise ConfigError(f"unknown analysis selector {sel!r}", "analysis.selector")
    _write_json(out_dir / "manifest.json", manifest)
    return 0


def cmd_metrics(reference_path, estimate_path, out_dir: Path) -> int:
    truth = cube_io.read_cube(reference_path)
    est = cube_io.read_cube(estimate_path)
    rows = _metrics_rows(truth, est)
    cube_io.write_csv(out_dir / "metrics.csv", ("target", "psnr_db", "ssim"), rows)
    for name, p, s in rows:
        print(f"{name}: psnr_db={cube_io.format_csv_value(p)} ssim={cube_io.format_csv_value(s)}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sievespec",
        description="Diffractive-lens multi-spectral imaging simulator and reconstructor",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON scenario config")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="FFT worker threads")
        p.add_argument(
            "--timings", action="store_true",
            help="write wall-clock iteration timings (breaks byte reproducibility)",
        )

    common(sub.add_parser("psf", help="compute and export the PSF bank"))
    p_sim = sub.add_parser("simulate", help="forward-project a cube and add noise")
    common(p_sim)
    p_sim.add_argument("cube", help="input spectral cube (SIFTCUBE1)")
    p_rec = sub.add_parser("reconstruct", help="reconstruct a cube from measurements")
    common(p_rec)
    p_rec.add_argument("measurements", help="measurement container (SIFTCUBE1)")
    common(sub.add_parser("analyze", help="run the configured analysis"))
    p_met = sub.add_parser("metrics", help="PSNR/SSIM between two cubes")
    common(p_met, needs_config=False)
    p_met.add_argument("reference", help="reference cube")
    p_met.add_argument("estimate", help="estimate cube")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is not None:
            _fft.set_workers(max(1, args.threads))
        out_dir = Path(args.out) if args.out else None
        if args.command == "metrics":
            out_dir = out_dir or Path(".")
            out_dir.mkdir(parents=True, exist_ok=True)
            return cmd_metrics(args.reference, args.estimate, out_dir)
        config = load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        if out_dir is None:
            out_dir = Path(config["output_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        _snapshot(config, out_dir)
        if args.command == "psf":
            return cmd_psf(config, out_dir, args.timings)
        if args.command == "simulate":
            return cmd_simulate(config, args.cube, out_dir, args.timings)
        if args.command == "reconstruct":
            return cmd_reconstruct(config, args.measurements, out_dir, args.timings)
        if args.command == "analyze":
            return cmd_analyze(config, out_dir, args.timings)
        parser.error(f"unknown command {args.command}")
        return 2
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DomainError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
