"""Experiment configuration files.

Configurations are INI files (``configparser`` syntax) with these sections:

``[experiment]``
    ``name``, ``seed``, ``output_dir``.
``[phantom]``
    ``kind = random | file | inline``; for ``random``: ``n_scatterers``,
    ``r_min``, ``r_max``, ``theta``, ``theta_spread``; for ``file``: ``path``;
    ``inline`` reads ``[scatterer.N]`` sections of the same file.
``[geometry]``
    ``kind = linear | ula | scoba | scobar | fractal | positions``;
    ``n_elements`` (linear), ``order`` (ula), ``A``/``B`` (scoba, scobar),
    ``generator``, ``order``, ``symmetrize`` (fractal), ``positions``
    (explicit indices); optional ``pitch`` (default half a wavelength),
    ``target_order`` (ULA the co-array must cover) and ``probe_elements``
    (probe the sparse layouts are drawn from, the data-rate baseline).
``[pulse]``
    ``f0``, ``sigma``, ``amplitude``.
``[acquisition]``
    ``fs``, ``T``, ``theta_min``, ``theta_max``, ``n_lines``, ``snr_db``.
``[pipeline]``
    ``kind`` (one of :data:`~sonolab.pipelines.PIPELINES`, or ``ULM`` /
    ``SUSHI`` for ``superres``), ``fraction``, ``window``, ``upsample``,
    ``target_order`` (SCOBA/SCOBAR), ``dynamic_range``, ``image_size``,
    ``dump_rf``, ``reference_pipeline``.
``[solver]``
    ``kind = l1 | ista | fista``, ``epsilon_rel``, ``lam``, ``grid_factor``.
``[superres]``
    ``nx``, ``nz``, ``pitch``, ``mb_density``, ``psf_sigma``, ``n_frames``,
    ``frame_rate``, ``n_remove``, ``localizer = sparse | centroid``,
    ``grid_factor``, ``threshold``, ``min_separation``, ``window``,
    ``max_displacement``, ``background``, ``noise_std``, ``tau``,
    ``method = ulm | sushi``, ``profile_axis = x | z``, ``max_iter`` (SUSHI
    deconvolution budget), ``frames`` (optional
    ``.npy`` stack instead of simulation); vessels in
    ``[vessel.N]`` sections (``x0, z0, x1, z1, speed``).

Every value is validated before any computation; problems raise
:class:`~sonolab.errors.ConfigError` naming the offending field.
"""

import configparser
import hashlib
import math
from pathlib import Path

from .errors import ConfigError

__all__ = ["ExperimentConfig", "load_config", "DEFAULTS"]

DEFAULTS = {
    "experiment": {"name": "experiment", "seed": "0", "output_dir": "out"},
    "phantom": {"kind": "random", "n_scatterers": "10", "r_min": "0.01", "r_max": "0.042",
                "theta": "0.0", "theta_spread": "0.0"},
    "geometry": {"kind": "linear", "n_elements": "64"},
    "pulse": {"f0": "3.4e6", "sigma": "0.212e-6", "amplitude": "1.0"},
    "acquisition": {"fs": "16e6", "T": "64e-6", "theta_min": "0.0", "theta_max": "0.0",
                    "n_lines": "1", "snr_db": "inf"},
    "pipeline": {"kind": "DAS", "fraction": "0.12", "window": "auto", "upsample": "1",
                 "dynamic_range": "60", "image_size": "256", "dump_rf": "false",
                 "reference_pipeline": "none"},
    "solver": {"kind": "l1", "epsilon_rel": "0.02", "lam": "auto", "grid_factor": "2"},
    "superres": {"nx": "128", "nz": "128", "pitch": "1e-4", "mb_density": "2.0",
                 "psf_sigma": "1.9e-4", "n_frames": "200", "frame_rate": "1000",
                 "n_remove": "1", "localizer": "sparse", "grid_factor": "8",
                 "threshold": "0.3", "min_separation": "3", "window": "3",
                 "max_displacement": "1e-4", "background": "0.0", "noise_std": "0.0",
                 "tau": "0", "method": "ulm", "profile_axis": "x", "max_iter": "2000"},
}

_GEOMETRIES = ("linear", "ula", "scoba", "scobar", "fractal", "positions")
_PHANTOMS = ("random", "file", "inline")
_SOLVERS = ("l1", "ista", "fista")
_PIPELINES = ("DAS", "MV", "IMAP", "FDBF", "FDBF+CS", "COBA", "SCOBA", "SCOBAR", "CFCOBA",
              "ULM", "SUSHI")


class ExperimentConfig:
    """Validated view of an experiment configuration.

    Parameters
    ----------
    parser : configparser.ConfigParser
    path : Path, optional
        Source file; relative paths inside the config resolve against it.
    """

    def __init__(self, parser, path=None):
        self.parser = parser
        self.path = Path(path) if path is not None else None
        for section, values in DEFAULTS.items():
            if not parser.has_section(section):
                parser.add_section(section)
            for key, value in values.items():
                if not parser.has_option(section, key):
                    parser.set(section, key, value)
        self.validate()

    # -- typed accessors ---------------------------------------------------

    def get(self, section, key):
        try:
            return self.parser.get(section, key).strip()
        except (configparser.NoSectionError, configparser.NoOptionError):
            raise ConfigError(f"{section}.{key}: missing") from None

    def has(self, section, key):
        return self.parser.has_option(section, key)

    def get_str(self, section, key, choices=None, upper=False):
        v = self.get(section, key)
        v = v.upper() if upper else v
        if choices is not None and v not in choices:
            raise ConfigError(f"{section}.{key}: {v!r} is not one of {', '.join(choices)}")
        return v

    def get_float(self, section, key, lo=None, hi=None, lo_open=False, allow_inf=False):
        raw = self.get(section, key)
        try:
            v = float(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected a number, got {raw!r}") from None
        if math.isnan(v) or (math.isinf(v) and not allow_inf):
            raise ConfigError(f"{section}.{key}: must be finite")
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise ConfigError(f"{section}.{key}: must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and v > hi:
            raise ConfigError(f"{section}.{key}: must be <= {hi}")
        return v

    def get_int(self, section, key, lo=None, hi=None):
        raw = self.get(section, key)
        try:
            v = int(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected an integer, got {raw!r}") from None
        if lo is not None and v < lo:
            raise ConfigError(f"{section}.{key}: must be >= {lo}")
        if hi is not None and v > hi:
            raise ConfigError(f"{section}.{key}: must be <= {hi}")
        return v

    def get_bool(self, section, key):
        raw = self.get(section, key).lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key}: expected a boolean, got {raw!r}")

    def get_optional_float(self, section, key, lo=None, lo_open=False):
        if self.get(section, key).lower() in ("auto", "none", ""):
            return None
        return self.get_float(section, key, lo=lo, lo_open=lo_open)

    def get_optional_int(self, section, key, lo=None):
        if self.get(section, key).lower() in ("auto", "none", ""):
            return None
        return self.get_int(section, key, lo=lo)

    def get_int_list(self, section, key):
        raw = self.get(section, key)
        try:
            return [int(v) for v in raw.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected integers, got {raw!r}") from None

    def resolve(self, value):
        p = Path(value)
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p

    def sections(self, prefix):
        return sorted((s for s in self.parser.sections() if s.startswith(prefix + ".")),
                      key=lambda s: (len(s), s))

    # -- validation --------------------------------------------------------

    def validate(self):
        """Check every field used by any command; raise on the first problem."""
        self.get_int("experiment", "seed", lo=0)
        kind = self.get_str("phantom", "kind", _PHANTOMS)
        if kind == "random":
            self.get_int("phantom", "n_scatterers", lo=0)
            r0 = self.get_float("phantom", "r_min", lo=0.0, lo_open=True)
            r1 = self.get_float("phantom", "r_max", lo=0.0, lo_open=True)
            if r1 < r0:
                raise ConfigError("phantom.r_max: must be >= phantom.r_min")
            self.get_float("phantom", "theta", lo=-math.pi / 2, hi=math.pi / 2)
            self.get_float("phantom", "theta_spread", lo=0.0)
        elif kind == "file":
            p = self.resolve(self.get("phantom", "path"))
            if not p.exists():
                raise ConfigError(f"phantom.path: file {str(p)!r} not found")
        geo = self.get_str("geometry", "kind", _GEOMETRIES)
        if geo == "linear":
            self.get_int("geometry", "n_elements", lo=1)
        elif geo == "ula":
            self.get_int("geometry", "order", lo=1)
        elif geo in ("scoba", "scobar"):
            self.get_int("geometry", "A", lo=1)
            self.get_int("geometry", "B", lo=1)
        elif geo == "positions":
            pos = self.get_int_list("geometry", "positions")
            if not pos or len(set(pos)) != len(pos):
                raise ConfigError("geometry.positions: need distinct integer indices")
        else:
            gen = self.get_int_list("geometry", "generator")
            if not gen or min(gen) != 0:
                raise ConfigError("geometry.generator: must contain 0 as its minimum")
            self.get_int("geometry", "order", lo=0)
            if self.has("geometry", "symmetrize"):
                self.get_bool("geometry", "symmetrize")
        if self.has("geometry", "pitch"):
            self.get_float("geometry", "pitch", lo=0.0, lo_open=True)
        if self.has("geometry", "target_order"):
            self.get_int("geometry", "target_order", lo=1)
        if self.has("geometry", "probe_elements"):
            self.get_int("geometry", "probe_elements", lo=1)
        self.get_float("pulse", "f0", lo=0.0, lo_open=True)
        self.get_float("pulse", "sigma", lo=0.0, lo_open=True)
        self.get_float("pulse", "amplitude", lo=0.0, lo_open=True)
        fs = self.get_float("acquisition", "fs", lo=0.0, lo_open=True)
        T = self.get_float("acquisition", "T", lo=0.0, lo_open=True)
        if T * fs < 8:
            raise ConfigError("acquisition.T: record shorter than 8 samples")
        t0 = self.get_float("acquisition", "theta_min", lo=-1.5, hi=1.5)
        t1 = self.get_float("acquisition", "theta_max", lo=-1.5, hi=1.5)
        n = self.get_int("acquisition", "n_lines", lo=1)
        if t1 < t0 or (n > 1 and t1 == t0):
            raise ConfigError("acquisition.theta_max: must exceed theta_min for several lines")
        snr = self.get_float("acquisition", "snr_db", allow_inf=True)
        if snr == -math.inf:
            raise ConfigError("acquisition.snr_db: must not be -inf")
        self.get_str("pipeline", "kind", _PIPELINES, upper=True)
        self.get_float("pipeline", "fraction", lo=0.0, hi=0.5, lo_open=True)
        self.get_optional_int("pipeline", "window", lo=0)
        self.get_int("pipeline", "upsample", lo=1)
        self.get_float("pipeline", "dynamic_range", lo=0.0, lo_open=True)
        self.get_int("pipeline", "image_size", lo=2)
        self.get_bool("pipeline", "dump_rf")
        ref = self.get("pipeline", "reference_pipeline").upper()
        if ref not in ("NONE",) + _PIPELINES[:9]:
            raise ConfigError(f"pipeline.reference_pipeline: unknown pipeline {ref!r}")
        if self.has("pipeline", "target_order"):
            self.get_int("pipeline", "target_order", lo=1)
        self.get_str("solver", "kind", _SOLVERS)
        self.get_float("solver", "epsilon_rel", lo=0.0)
        self.get_optional_float("solver", "lam", lo=0.0)
        self.get_int("solver", "grid_factor", lo=1)
        sr = "superres"
        self.get_int(sr, "nx", lo=2)
        self.get_int(sr, "nz", lo=2)
        self.get_float(sr, "pitch", lo=0.0, lo_open=True)
        self.get_float(sr, "mb_density", lo=0.0)
        self.get_float(sr, "psf_sigma", lo=0.0, lo_open=True)
        nf = self.get_int(sr, "n_frames", lo=2)
        self.get_float(sr, "frame_rate", lo=0.0, lo_open=True)
        nr = self.get_int(sr, "n_remove", lo=0)
        if nr >= nf:
            raise ConfigError("superres.n_remove: must be smaller than n_frames")
        self.get_str(sr, "localizer", ("sparse", "centroid"))
        self.get_int(sr, "grid_factor", lo=1)
        self.get_float(sr, "threshold", lo=0.0, lo_open=True)
        self.get_float(sr, "min_separation", lo=0.0)
        self.get_int(sr, "window", lo=0)
        self.get_float(sr, "max_displacement", lo=0.0)
        self.get_float(sr, "background", lo=0.0)
        self.get_int(sr, "max_iter", lo=1)
        self.get_float(sr, "noise_std", lo=0.0)
        tau = self.get_int(sr, "tau", lo=0)
        if tau + 2 > nf:
            raise ConfigError("superres.tau: needs n_frames >= tau + 2")
        for name in self.sections("vessel"):
            for key in ("x0", "z0", "x1", "z1"):
                self.get_float(name, key)
            if self.has(name, "speed"):
                self.get_float(name, "speed", lo=0.0)
        self.get_str(sr, "method", ("ulm", "sushi"))
        self.get_str(sr, "profile_axis", ("x", "z"))
        if kind == "inline":
            for name in self.sections("scatterer"):
                self.get_float(name, "r", lo=0.0, lo_open=True)

    # -- identity ----------------------------------------------------------

    def canonical(self):
        """Deterministic text form: sorted sections and keys."""
        lines = []
        for section in sorted(self.parser.sections()):
            lines.append(f"[{section}]")
            for key in sorted(self.parser.options(section)):
                lines.append(f"{key} = {self.parser.get(section, key).strip()}")
        return "\n".join(lines) + "\n"

    def digest(self):
        """SHA-256 of :meth:`canonical` (first 16 hex digits)."""
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def override(self, section, key, value):
        """Set a value and re-validate."""
        self.parser.set(section, key, str(value))
        self.validate()


def load_config(path):
    """Read and validate an experiment configuration file.

    Raises
    ------
    ConfigError
        Unreadable file, syntax errors or invalid fields.
    """
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with path.open() as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    return ExperimentConfig(cp, path)
