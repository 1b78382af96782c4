"""Command-line driver: ``sonolab {simulate,beamform,array,superres,metrics} CONFIG``.

Exit codes: 0 success, 1 unexpected failure, 2 configuration or input
error, 3 verification failure, 4 solver non-convergence.
"""

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, kernels
from . import acquisition as acq
from . import beamform_time as bt
from . import geometry as geo
from . import pipelines
from . import postproc as pp
from . import superres as sr
from .config import load_config
from .errors import (ConfigError, InvalidArgumentError, NoConvergenceError, SonolabError,
                     VerificationError)

__all__ = ["main", "build_parser", "cmd_simulate", "cmd_beamform", "cmd_array",
           "cmd_superres", "cmd_metrics", "thread_count"]

log = logging.getLogger("sonolab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_VERIFY, EXIT_SOLVER = 0, 1, 2, 3, 4


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def thread_count():
    """Worker threads: ``SONOLAB_THREADS`` if set (>= 1), else the CPU count."""
    raw = os.environ.get("SONOLAB_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"SONOLAB_THREADS: expected an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError("SONOLAB_THREADS: must be >= 1")
        return n
    return os.cpu_count() or 1


def _map(fn, items):
    """Order-preserving parallel map."""
    items = list(items)
    n = min(thread_count(), max(len(items), 1))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out, cfg, command, files, extra=None):
    """Deterministic JSON manifest: config digest, versions, seed and file hashes."""
    import scipy

    manifest = {
        "command": command,
        "config_hash": cfg.digest(),
        "config": cfg.canonical(),
        "seed": cfg.get_int("experiment", "seed"),
        "versions": {"sonolab": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "kernel_backend": kernels.BACKEND,
        "files": {str(Path(f).relative_to(out)): _sha256(f) for f in sorted(files)},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _pitch(cfg):
    if cfg.has("geometry", "pitch"):
        return cfg.get_float("geometry", "pitch", lo=0.0, lo_open=True)
    return acq.default_pitch(cfg.get_float("pulse", "f0"))


def build_geometry(cfg):
    """Receive aperture described by the ``[geometry]`` section."""
    kind = cfg.get_str("geometry", "kind")
    pitch = _pitch(cfg)
    if kind == "linear":
        return geo.make_linear_array(cfg.get_int("geometry", "n_elements"), pitch)
    if kind == "ula":
        return geo.make_ula(cfg.get_int("geometry", "order"), pitch)
    if kind == "scoba":
        return geo.scoba_geometry(cfg.get_int("geometry", "A"), cfg.get_int("geometry", "B"),
                                  pitch)
    if kind == "scobar":
        return geo.scobar_geometry(cfg.get_int("geometry", "A"),
                                   cfg.get_int("geometry", "B"), pitch)
    if kind == "fractal":
        sym = cfg.get_bool("geometry", "symmetrize") if cfg.has("geometry", "symmetrize") \
            else False
        return geo.fractal_geometry(cfg.get_int_list("geometry", "generator"),
                                    cfg.get_int("geometry", "order"), pitch, sym)
    if kind == "positions":
        return geo.ArrayGeometry(tuple(cfg.get_int_list("geometry", "positions")), pitch,
                                 label="custom")
    raise ConfigError(f"geometry.kind: unsupported {kind!r}")


def target_ula(cfg, g):
    """Full array a sparse layout must emulate (``[geometry] target_order``)."""
    kind = cfg.get_str("geometry", "kind")
    if cfg.has("geometry", "target_order"):
        order = cfg.get_int("geometry", "target_order", lo=1)
    elif kind in ("scoba", "scobar"):
        order = cfg.get_int("geometry", "A") * cfg.get_int("geometry", "B")
    elif kind == "ula":
        order = cfg.get_int("geometry", "order")
    else:
        # largest ULA whose positions the co-array contains contiguously
        have = set(geo.sum_coarray(g).positions)
        order = 0
        while order in have and -order in have:
            order += 1
        order = max(order, 1)
    return geo.make_ula(order, g.pitch)


def build_pulse(cfg):
    return acq.Pulse(cfg.get_float("pulse", "f0"), cfg.get_float("pulse", "sigma"),
                     cfg.get_float("pulse", "amplitude"))


def build_phantom(cfg):
    kind = cfg.get_str("phantom", "kind")
    seed = cfg.get_int("experiment", "seed")
    if kind == "random":
        return acq.random_phantom(cfg.get_int("phantom", "n_scatterers"),
                                  (cfg.get_float("phantom", "r_min"),
                                   cfg.get_float("phantom", "r_max")),
                                  cfg.get_float("phantom", "theta"),
                                  cfg.get_float("phantom", "theta_spread"), seed=seed)
    if kind == "file":
        return acq.load_phantom(cfg.resolve(cfg.get("phantom", "path")))
    scat = []
    for sec in cfg.sections("scatterer"):
        scat.append(acq.Scatterer(cfg.get_float(sec, "r", lo=0.0, lo_open=True),
                                  cfg.get_float(sec, "theta") if cfg.has(sec, "theta") else 0.0,
                                  cfg.get_float(sec, "reflectivity")
                                  if cfg.has(sec, "reflectivity") else 1.0,
                                  cfg.get_float(sec, "nonlinearity")
                                  if cfg.has(sec, "nonlinearity") else 0.0))
    return acq.Phantom(tuple(scat), cfg.get("experiment", "name"))


def theta_grid(cfg):
    n = cfg.get_int("acquisition", "n_lines")
    t0 = cfg.get_float("acquisition", "theta_min")
    t1 = cfg.get_float("acquisition", "theta_max")
    return np.array([t0]) if n == 1 else np.linspace(t0, t1, n)


def _out_dir(cfg, out):
    d = Path(out) if out is not None else cfg.resolve(cfg.get("experiment", "output_dir"))
    d.mkdir(parents=True, exist_ok=True)
    return d


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_simulate(cfg, out=None):
    """Simulate one channel-data file per line angle into ``<out>/channels``.

    Returns
    -------
    list of Path
        Written channel files (empty for an empty phantom).
    """
    out = _out_dir(cfg, out)
    g = build_geometry(cfg)
    pulse = build_pulse(cfg)
    phantom = build_phantom(cfg)
    fs = cfg.get_float("acquisition", "fs")
    T = cfg.get_float("acquisition", "T")
    snr = cfg.get_float("acquisition", "snr_db", allow_inf=True)
    seed = cfg.get_int("experiment", "seed")
    chan = out / "channels"
    chan.mkdir(exist_ok=True)
    for old in chan.glob("line_*.slcd"):
        old.unlink()
    thetas = theta_grid(cfg)
    files = []
    if len(phantom):
        def one(item):
            i, th = item
            cd = acq.synth_channel_data(phantom, g, pulse, fs, T, float(th))
            if math.isfinite(snr):
                cd = acq.add_noise(cd, snr, seed=seed * 100003 + i)
            return cd

        datas = _map(one, list(enumerate(thetas)))
        for i, cd in enumerate(datas):
            path = chan / f"line_{i:03d}.slcd"
            acq.save_channel_data(path, cd)
            files.append(path)
    geo.save_geometry(out / "geometry.txt", g)
    acq.save_phantom(out / "phantom.ini", phantom)
    _write_manifest(out, cfg, "simulate", files + [out / "geometry.txt", out / "phantom.ini"],
                    {"empty_phantom": len(phantom) == 0, "n_lines": len(files),
                     "n_channels": g.n_elements})
    log.info("simulated %d line(s) with %d channels into %s", len(files), g.n_elements, chan)
    return files


def _load_channels(directory):
    files = sorted((Path(directory) / "channels").glob("line_*.slcd"))
    return [acq.load_channel_data(f) for f in files]


def _pipeline_params(cfg, g):
    kind = cfg.get_str("pipeline", "kind", upper=True)
    params = {"upsample": cfg.get_int("pipeline", "upsample"),
              "fraction": cfg.get_float("pipeline", "fraction"),
              "solver": cfg.get_str("solver", "kind"),
              "epsilon_rel": cfg.get_float("solver", "epsilon_rel"),
              "lam": cfg.get_optional_float("solver", "lam", lo=0.0),
              "grid_factor": cfg.get_int("solver", "grid_factor")}
    window = cfg.get_optional_int("pipeline", "window", lo=0)
    if window is not None:
        params["window"] = window
    if kind in ("SCOBA", "SCOBAR"):
        params["target"] = target_ula(cfg, g)
    return kind, params


def _reference_lines(ref_dir):
    files = sorted((Path(ref_dir) / "rf").glob("line_*.slrf"))
    return [bt.load_rfline(f) for f in files]


def _envelope_nrmse(lines, refs):
    if len(lines) != len(refs):
        raise InvalidArgumentError(f"{len(lines)} lines but reference has {len(refs)}")
    a = np.concatenate([pp.envelope(x) for x in lines])
    b = np.concatenate([pp.envelope(x) for x in refs])
    return pp.nrmse(a, b)


def _write_image(out, stem, image, bits=8):
    files = [pp.write_pgm(out / f"{stem}.pgm", image, bits),
             pp.write_png(out / f"{stem}.png", image, bits)]
    return files


def cmd_beamform(cfg, out=None, input_dir=None, ref=None):
    """Beamform simulated lines with the configured pipeline.

    Writes ``bmode.pgm``/``bmode.png``, ``metrics.csv`` and, when
    ``pipeline.dump_rf`` is set, ``rf/line_NNN.slrf``.  Without
    ``input_dir`` the acquisition is simulated first into ``<out>``.

    Returns
    -------
    dict
        Metric name to value.
    """
    out = _out_dir(cfg, out)
    if input_dir is None:
        cmd_simulate(cfg, out)
        input_dir = out
    datas = _load_channels(input_dir)
    if not datas:
        raise InvalidArgumentError(f"no channel data found under {Path(input_dir) / 'channels'}")
    g = datas[0].geometry
    pulse = build_pulse(cfg)
    kind, params = _pipeline_params(cfg, build_geometry(cfg))
    if kind in ("ULM", "SUSHI"):
        raise ConfigError(f"pipeline.kind: {kind} runs through the superres command")
    results = _map(lambda cd: pipelines.run_pipeline(kind, cd, pulse, **params), datas)
    lines = [r.line for r in results]
    dr = cfg.get_float("pipeline", "dynamic_range")
    if len(lines) >= 2:
        size = cfg.get_int("pipeline", "image_size")
        image = pp.scan_convert(lines, (size, size), dr)
    else:
        image = pp.lines_to_image(lines, dr)
    files = _write_image(out, "bmode", image)
    if cfg.get_bool("pipeline", "dump_rf"):
        rf = out / "rf"
        rf.mkdir(exist_ok=True)
        for old in rf.glob("line_*.slrf"):
            old.unlink()
        for i, line in enumerate(lines):
            path = rf / f"line_{i:03d}.slrf"
            bt.save_rfline(path, line)
            files.append(path)
    probe = cfg.get_int("geometry", "probe_elements") if cfg.has("geometry", "probe_elements") \
        else g.n_elements
    n_s = datas[0].n_samples
    r0 = results[0]
    metrics = {
        "n_lines": float(len(lines)),
        "samples_per_channel": float(r0.used_samples),
        "channels": float(r0.used_channels),
        "compression_ratio": pp.compression_ratio(n_s, probe, r0.used_samples,
                                                  r0.used_channels),
    }
    ref_kind = cfg.get("pipeline", "reference_pipeline").upper()
    if ref_kind != "NONE":
        ref_params = {"upsample": params["upsample"]}
        if ref_kind in ("SCOBA", "SCOBAR"):
            ref_params["target"] = target_ula(cfg, g)
        refs = _map(lambda cd: pipelines.run_pipeline(ref_kind, cd, pulse, **ref_params).line,
                    datas)
        metrics[f"nrmse_vs_{ref_kind.lower()}"] = _envelope_nrmse(lines, refs)
    if ref is not None:
        refs = _reference_lines(ref)
        if refs:
            metrics["nrmse_vs_ref"] = _envelope_nrmse(lines, refs)
        else:
            warnings.warn(f"reference run {ref} has no RF lines; NRMSE omitted", stacklevel=2)
            log.warning("reference run %s has no RF lines; NRMSE omitted", ref)
    csv_path = pp.save_metrics_csv(out / "metrics.csv", sorted(metrics.items()), cfg.digest())
    files.append(csv_path)
    _write_manifest(out, cfg, "beamform", files,
                    {"input": str(input_dir), "reference": None if ref is None else str(ref)})
    return metrics


def cmd_array(cfg, out=None):
    """Geometry report: elements, co-array, coverage verdict and beam patterns.

    Raises
    ------
    VerificationError
        When the sum co-array does not cover the target ULA.
    """
    out = _out_dir(cfg, out)
    g = build_geometry(cfg)
    target = target_ula(cfg, g)
    kind = cfg.get_str("geometry", "kind")
    co = geo.sum_coarray(g)
    if kind == "scobar":
        covers = set(geo.sum_coarray(target).positions) <= set(co.positions)
        claim = f"covers co-array of ULA({(target.n_elements + 1) // 2})"
    else:
        covers = geo.verify_coarray_covers(g, target)
        claim = f"covers ULA({(target.n_elements + 1) // 2})"
    lags, counts = geo.intrinsic_apodization(g)
    f0 = cfg.get_float("pulse", "f0")
    thetas = geo.default_theta_grid()
    das = geo.das_beam_pattern(g, omega0=2 * np.pi * f0, theta_grid=thetas)
    coba = geo.coba_beam_pattern(g, omega0=2 * np.pi * f0, theta_grid=thetas)
    report = [f"geometry: {g.label or kind}",
              f"elements: {g.n_elements}",
              f"positions: {' '.join(map(str, g.positions))}",
              f"coarray: [{min(co.positions)}, {max(co.positions)}] "
              f"({co.n_elements} distinct lags)",
              f"{claim}: {'true' if covers else 'false'}"]
    text = "\n".join(report) + "\n"
    sys.stdout.write(text)
    files = [out / "array_report.txt", out / "coarray.csv", out / "beam_pattern.csv"]
    files[0].write_text(text)
    with files[1].open("w") as fh:
        fh.write("lag,count\n")
        fh.writelines(f"{int(a)},{int(b)}\n" for a, b in zip(lags, counts))
    with files[2].open("w") as fh:
        fh.write("theta_rad,das_db,coba_db\n")
        fh.writelines(f"{t!r},{a!r},{b!r}\n" for t, a, b in
                      zip(thetas.tolist(), das.magnitude_db().tolist(),
                          coba.magnitude_db().tolist()))
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        plt = None
    if plt is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(np.degrees(thetas), das.magnitude_db(), label="DAS")
        ax.plot(np.degrees(thetas), coba.magnitude_db(), label="COBA")
        ax.set_xlabel("angle (deg)")
        ax.set_ylabel("dB")
        ax.set_ylim(-80, 2)
        ax.legend()
        fig.savefig(out / "beam_pattern.png", dpi=80, metadata={"Software": None})
        plt.close(fig)
        files.append(out / "beam_pattern.png")
    _write_manifest(out, cfg, "array", files, {"covers": bool(covers)})
    if not covers:
        raise VerificationError(f"sum co-array does not {claim.split(' ', 1)[1]}")
    return covers


def _build_frames(cfg):
    srs = "superres"
    nx, nz = cfg.get_int(srs, "nx"), cfg.get_int(srs, "nz")
    pitch = cfg.get_float(srs, "pitch")
    grid = acq.GridSpec(nx, nz, pitch)
    if cfg.has(srs, "frames"):
        path = cfg.resolve(cfg.get(srs, "frames"))
        try:
            stack = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"superres.frames: cannot read {str(path)!r}: {exc}") from None
        if stack.ndim != 3 or stack.shape[1:] != grid.shape:
            raise ConfigError(f"superres.frames: shape {stack.shape} does not match "
                              f"(F, {nz}, {nx})")
        return acq.FrameSequence(stack, cfg.get_float(srs, "frame_rate"), pitch), grid
    vessels = acq.vessels_from_config(cfg.parser)
    if not vessels:
        raise ConfigError("superres: no [vessel.N] sections and no frames file")
    background = None
    level = cfg.get_float(srs, "background")
    seed = cfg.get_int("experiment", "seed")
    if level > 0:
        rng = np.random.default_rng(seed + 7919)
        background = level * (0.5 + rng.random(grid.shape))
    seq = acq.mb_frame_sequence(vessels, cfg.get_float(srs, "mb_density"),
                                cfg.get_float(srs, "psf_sigma"), cfg.get_int(srs, "n_frames"),
                                cfg.get_float(srs, "frame_rate"), grid, seed=seed,
                                background=background,
                                noise_std=cfg.get_float(srs, "noise_std"))
    return seq, grid


def _localization_error(locs, truth, max_dist):
    errs = []
    for f in range(locs.n_frames):
        pts = locs.for_frame(f)
        if not len(pts) or f >= len(truth) or not len(truth[f]):
            continue
        t = truth[f][:, 1:3]
        d = np.sqrt(((pts[:, None, :] - t[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
        errs.append(d[d <= max_dist])
    errs = np.concatenate(errs) if errs else np.zeros(0)
    return errs


def cmd_superres(cfg, out=None):
    """ULM or SUSHI super-resolution of a microbubble sequence.

    Writes ``map.pgm`` (16-bit), ``map.png``, ``map.csv``, ``blurred.pgm``,
    ``localizations.csv`` (ULM), ``tracks.csv`` (ULM) and ``metrics.csv``.
    """
    out = _out_dir(cfg, out)
    srs = "superres"
    seq, grid = _build_frames(cfg)
    method = cfg.get_str(srs, "method", ("ulm", "sushi"))
    kind = cfg.get_str("pipeline", "kind", upper=True)
    if kind in ("ULM", "SUSHI"):
        method = kind.lower()
    n_remove = cfg.get_int(srs, "n_remove")
    filt = sr.svd_clutter_filter(seq, n_remove) if n_remove else seq
    s = cfg.get_int(srs, "grid_factor")
    sigma_px = cfg.get_float(srs, "psf_sigma") / grid.pitch
    psf = sr.gaussian_psf(sigma_px, s)
    files, metrics = [], {}
    blurred = sr.max_intensity_image(filt)
    if method == "ulm":
        if cfg.get_str(srs, "localizer") == "sparse":
            locs = sr.localize_sparse_sequence(filt, psf, s,
                                               threshold=cfg.get_float(srs, "threshold"),
                                               half_patch=max(2, int(math.ceil(2 * sigma_px))),
                                               half_support=max(1, int(math.ceil(sigma_px))))
        else:
            def one(f):
                cand = sr.detect_and_isolate(filt.frames[f], cfg.get_float(srs, "threshold"),
                                             cfg.get_float(srs, "min_separation"), grid.pitch,
                                             f, seq.n_frames)
                return sr.localize_candidates(filt.frames[f], cand,
                                              cfg.get_int(srs, "window"), grid.pitch)
            locs = sr.LocalizationSet.concatenate(_map(one, range(seq.n_frames)),
                                                  seq.n_frames)
        tracks = sr.track_nearest(locs, cfg.get_float(srs, "max_displacement"),
                                  seq.frame_rate)
        smap = sr.accumulate_map(locs, s, grid.shape, grid.pitch)
        files.append(sr.save_localizations_csv(out / "localizations.csv", locs))
        tpath = out / "tracks.csv"
        with tpath.open("w") as fh:
            fh.write("track,frame,x_m,z_m\n")
            for tid, t in enumerate(tracks):
                fh.writelines(f"{tid},{int(f)},{float(x)!r},{float(z)!r}\n"
                              for f, x, z in zip(t.frames, t.x, t.z))
        files.append(tpath)
        metrics["n_localizations"] = float(len(locs))
        metrics["n_tracks"] = float(len(tracks))
        metrics["map_total"] = smap.total
        if seq.truth:
            errs = _localization_error(locs, seq.truth, 2.355 * sigma_px * grid.pitch)
            if errs.size:
                metrics["loc_error_mean_m"] = float(errs.mean())
                metrics["loc_error_rms_m"] = float(np.sqrt(np.mean(errs ** 2)))
    else:
        # the deconvolution is run for a fixed iteration budget; the map is
        # usable long before the relative-change criterion is met
        smap = sr.sushi_map(filt, psf, s, cfg.get_int(srs, "tau"),
                            max_iter=cfg.get_int(srs, "max_iter"), strict=False)
        g2 = sr.sushi_g2(filt, (cfg.get_int(srs, "tau"),))[0]
        files += _write_image(out, "g2", np.clip(g2, 0, None), 16)
    # lateral profile (sum over depth) unless the vessels run laterally
    axis = 1 if cfg.get_str(srs, "profile_axis", ("x", "z")) == "z" else 0
    metrics["valley_to_peak_map"] = pp.valley_to_peak(smap.values.sum(axis=axis))
    metrics["valley_to_peak_blurred"] = pp.valley_to_peak(blurred.sum(axis=axis))
    files += _write_image(out, "map", smap.values, 16)
    files += _write_image(out, "blurred", blurred, 16)
    files.append(sr.save_map_csv(out / "map.csv", smap))
    files.append(pp.save_metrics_csv(out / "metrics.csv", sorted(metrics.items()),
                                     cfg.digest()))
    _write_manifest(out, cfg, "superres", files, {"method": method})
    return metrics


def cmd_metrics(cfg, out=None, ref=None):
    """Envelope NRMSE between the RF lines of a run and a reference run."""
    out = _out_dir(cfg, out)
    if ref is None:
        raise ConfigError("metrics: --ref <run-dir> is required")
    lines = _reference_lines(out)
    refs = _reference_lines(ref)
    if not lines or not refs:
        raise InvalidArgumentError("both runs need RF line dumps (pipeline.dump_rf = true)")
    value = _envelope_nrmse(lines, refs)
    path = pp.save_metrics_csv(out / "metrics_vs_ref.csv", [("nrmse_vs_ref", value)],
                               cfg.digest())
    sys.stdout.write(f"nrmse_vs_ref,{value!r}\n")
    (out / "metrics_manifest.json").write_text(
        json.dumps({"config_hash": cfg.digest(), "reference": str(ref),
                    "files": {path.name: _sha256(path)}}, indent=2, sort_keys=True) + "\n")
    return {"nrmse_vs_ref": value}


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="sonolab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"sonolab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "simulate channel data"),
                           ("beamform", "beamform, recover and post-process"),
                           ("array", "array geometry and co-array report"),
                           ("superres", "microbubble super-resolution"),
                           ("metrics", "compare a run with a reference run")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="experiment configuration (INI)")
        sp.add_argument("--out", help="output directory (overrides experiment.output_dir)")
        sp.add_argument("--seed", type=int, help="override experiment.seed")
        sp.add_argument("--ref", help="reference run directory")
        if name == "beamform":
            sp.add_argument("--input", help="directory of a previous simulate run")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: must be non-negative")
            cfg.override("experiment", "seed", args.seed)
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "beamform":
            metrics = cmd_beamform(cfg, args.out, args.input, args.ref)
            for k, v in sorted(metrics.items()):
                sys.stdout.write(f"{k},{v!r}\n")
        elif args.command == "array":
            cmd_array(cfg, args.out)
        elif args.command == "superres":
            metrics = cmd_superres(cfg, args.out)
            for k, v in sorted(metrics.items()):
                sys.stdout.write(f"{k},{v!r}\n")
        else:
            cmd_metrics(cfg, args.out, args.ref)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except VerificationError as exc:
        sys.stderr.write(f"verification failed: {exc}\n")
        return EXIT_VERIFY
    except NoConvergenceError as exc:
        sys.stderr.write(f"solver did not converge (residual {exc.residual:.3g}): {exc}\n")
        return EXIT_SOLVER
    except (InvalidArgumentError, SonolabError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
