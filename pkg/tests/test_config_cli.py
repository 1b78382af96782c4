"""Tests for experiment configuration and the command-line driver."""

import json
from pathlib import Path

import numpy as np
import pytest

from sonolab import cli, pipelines
from sonolab.acquisition import load_channel_data
from sonolab.beamform_time import load_rfline
from sonolab.config import load_config
from sonolab.delays import SPEED_OF_SOUND
from sonolab.errors import ConfigError, NoConvergenceError
from sonolab.postproc import envelope, load_metrics_csv, read_pgm

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_LINE = """
[experiment]
name = small
seed = {seed}

[phantom]
kind = inline

[scatterer.0]
r = 0.02
theta = {theta}

[geometry]
kind = linear
n_elements = 8

[acquisition]
T = 40e-6
theta_min = {theta}
theta_max = {theta}

[pipeline]
kind = DAS
dump_rf = true
"""

SMALL_SUPERRES = """
[experiment]
seed = 1

[superres]
nx = 32
nz = 32
pitch = 1e-4
mb_density = {density}
psf_sigma = 1.5e-4
n_frames = 12
frame_rate = 100
grid_factor = 4
threshold = 0.3
{extra}

[vessel.0]
x0 = 0.0016
z0 = 0.0
x1 = 0.0016
z1 = 0.0031
speed = 0.01
"""


def write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


class TestConfig:
    def test_defaults_fill_missing_sections(self, tmp_path):
        cfg = load_config(write(tmp_path, "[experiment]\nseed = 4\n"))
        assert cfg.get_int("experiment", "seed") == 4
        assert cfg.get_int("geometry", "n_elements") == 64
        assert cfg.get_float("acquisition", "fs") == 16e6
        assert cfg.get_float("pulse", "f0") == 3.4e6

    @pytest.mark.parametrize("text, field", [
        ("[geometry]\nn_elements = 0\n", "geometry.n_elements"),
        ("[acquisition]\nfs = fast\n", "acquisition.fs"),
        ("[pipeline]\nkind = NOPE\n", "pipeline.kind"),
        ("[pipeline]\nfraction = 0.9\n", "pipeline.fraction"),
        ("[phantom]\nr_min = 0.05\nr_max = 0.01\n", "phantom.r_max"),
        ("[superres]\nn_frames = 4\nn_remove = 4\n", "superres.n_remove"),
        ("[geometry]\nkind = fractal\ngenerator = 1 2\norder = 2\n", "geometry.generator"),
        ("[vessel.0]\nx0 = 0\nz0 = 0\nx1 = a\nz1 = 0\n", "vessel.0.x1"),
    ])
    def test_field_level_errors(self, tmp_path, text, field):
        with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
            load_config(write(tmp_path, text))

    def test_unreadable_and_malformed(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.ini")
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "no section header\n"))

    def test_digest_is_stable_and_sensitive(self, tmp_path):
        a = load_config(write(tmp_path, "[experiment]\nseed = 1\n", "a.ini"))
        b = load_config(write(tmp_path, "[experiment]\n  seed=1\n", "b.ini"))
        assert a.digest() == b.digest()
        b.override("experiment", "seed", 2)
        assert a.digest() != b.digest()

    def test_override_revalidates(self, tmp_path):
        cfg = load_config(write(tmp_path, "[experiment]\nseed = 1\n"))
        with pytest.raises(ConfigError):
            cfg.override("geometry", "n_elements", -3)

    def test_shipped_configs_are_valid(self):
        for path in sorted(CONFIGS.glob("*.ini")):
            load_config(path)


class TestThreads:
    def test_env_var(self, monkeypatch):
        monkeypatch.setenv("SONOLAB_THREADS", "3")
        assert cli.thread_count() == 3
        monkeypatch.delenv("SONOLAB_THREADS")
        assert cli.thread_count() >= 1

    def test_invalid_env_var_exits_2(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SONOLAB_THREADS", "many")
        cfg = write(tmp_path, SMALL_LINE.format(seed=0, theta=0.0))
        code, _, err = run(["simulate", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 2 and "SONOLAB_THREADS" in err


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


class TestArrayCommand:
    def test_scoba_report(self, tmp_path, capsys):
        code, out, _ = run(["array", CONFIGS / "scoba_3_3.ini", "--out", tmp_path], capsys)
        assert code == 0
        assert "covers ULA(9): true" in out
        assert "elements: 9" in out
        assert (tmp_path / "beam_pattern.csv").read_text().startswith("theta_rad,das_db,coba_db")
        lags = np.loadtxt(tmp_path / "coarray.csv", delimiter=",", skiprows=1)
        assert set(range(-8, 9)) <= set(lags[:, 0].astype(int))

    def test_coverage_failure_exits_3(self, tmp_path, capsys):
        cfg = write(tmp_path, "[geometry]\nkind = positions\npositions = 0 1\n"
                              "target_order = 3\n")
        code, out, err = run(["array", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 3
        assert "covers ULA(3): false" in out
        assert "verification failed" in err
        assert json.loads((tmp_path / "o" / "manifest.json").read_text())["covers"] is False

    def test_fractal_lists_fifteen_elements(self, tmp_path, capsys):
        cfg = write(tmp_path, "[geometry]\nkind = fractal\ngenerator = 0 1\norder = 3\n"
                              "symmetrize = true\n")
        code, out, _ = run(["array", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 0
        assert "elements: 15" in out
        positions = next(ln for ln in out.splitlines() if ln.startswith("positions:"))
        assert len(positions.split()) - 1 == 15


class TestSimulateCommand:
    def test_sixty_four_channel_files(self, tmp_path, capsys):
        cfg = write(tmp_path, "[phantom]\nn_scatterers = 2\nr_max = 0.015\n"
                              "[acquisition]\nT = 40e-6\n")
        code, _, _ = run(["simulate", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 0
        files = sorted((tmp_path / "o" / "channels").glob("*.slcd"))
        assert len(files) == 1
        cd = load_channel_data(files[0])
        assert cd.samples.shape[0] == 64 and cd.fs == 16e6
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["n_channels"] == 64
        assert manifest["config_hash"] == load_config(cfg).digest()

    def test_empty_phantom_flagged(self, tmp_path, capsys):
        cfg = write(tmp_path, "[phantom]\nn_scatterers = 0\n")
        code, _, _ = run(["simulate", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 0
        assert list((tmp_path / "o" / "channels").glob("*")) == []
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["empty_phantom"] is True and manifest["n_lines"] == 0

    def test_fixed_seed_is_byte_identical(self, tmp_path, capsys):
        cfg = write(tmp_path, "[phantom]\nn_scatterers = 3\nr_max = 0.015\n"
                              "[geometry]\nn_elements = 8\n"
                              "[acquisition]\nT = 30e-6\nsnr_db = 10\n")
        for d in ("a", "b", "c"):
            extra = ["--seed", "9"] if d == "c" else []
            assert run(["simulate", cfg, "--out", tmp_path / d] + extra, capsys)[0] == 0
        a = (tmp_path / "a" / "channels" / "line_000.slcd").read_bytes()
        assert a == (tmp_path / "b" / "channels" / "line_000.slcd").read_bytes()
        assert a != (tmp_path / "c" / "channels" / "line_000.slcd").read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
            (tmp_path / "b" / "manifest.json").read_bytes()

    def test_negative_seed_exits_2(self, tmp_path, capsys):
        cfg = write(tmp_path, "[phantom]\nn_scatterers = 0\n")
        assert run(["simulate", cfg, "--seed", "-1", "--out", tmp_path], capsys)[0] == 2

    def test_missing_config_exits_2(self, tmp_path, capsys):
        code, _, err = run(["simulate", tmp_path / "nope.ini"], capsys)
        assert code == 2 and "config error" in err


class TestBeamformCommand:
    def test_das_bright_spot_at_scatterer(self, tmp_path, capsys):
        theta = 0.1
        cfg = write(tmp_path, SMALL_LINE.format(seed=0, theta=theta))
        code, out, _ = run(["beamform", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 0
        line = load_rfline(tmp_path / "o" / "rf" / "line_000.slrf")
        assert line.theta == theta
        t_peak = line.t0 + np.argmax(envelope(line)) / line.fs
        assert t_peak == pytest.approx(2 * 0.02 / SPEED_OF_SOUND, abs=2 / line.fs)
        metrics = load_metrics_csv(tmp_path / "o" / "metrics.csv")
        assert metrics["compression_ratio"] == 1.0
        assert "compression_ratio," in out
        assert read_pgm(tmp_path / "o" / "bmode.pgm").shape[1] == 1

    def test_fdbf_matches_das_reference(self, tmp_path, capsys):
        code, _, _ = run(["beamform", CONFIGS / "fdbf_line.ini", "--out", tmp_path], capsys)
        assert code == 0
        assert load_metrics_csv(tmp_path / "metrics.csv")["nrmse_vs_das"] <= 0.05

    def test_separate_input_directory(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL_LINE.format(seed=0, theta=0.0))
        assert run(["simulate", cfg, "--out", tmp_path / "sim"], capsys)[0] == 0
        code, _, _ = run(["beamform", cfg, "--input", tmp_path / "sim", "--out",
                          tmp_path / "bf"], capsys)
        assert code == 0
        assert not (tmp_path / "bf" / "channels").exists()

    def test_missing_reference_is_a_warning(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL_LINE.format(seed=0, theta=0.0))
        (tmp_path / "empty_ref").mkdir()
        with pytest.warns(UserWarning, match="no RF lines"):
            code, _, _ = run(["beamform", cfg, "--out", tmp_path / "o", "--ref",
                              tmp_path / "empty_ref"], capsys)
        assert code == 0
        assert "nrmse_vs_ref" not in load_metrics_csv(tmp_path / "o" / "metrics.csv")

    def test_reference_run_nrmse(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL_LINE.format(seed=0, theta=0.0))
        assert run(["beamform", cfg, "--out", tmp_path / "ref"], capsys)[0] == 0
        code, _, _ = run(["beamform", cfg, "--out", tmp_path / "o", "--ref", tmp_path / "ref"],
                         capsys)
        assert code == 0
        assert load_metrics_csv(tmp_path / "o" / "metrics.csv")["nrmse_vs_ref"] == 0.0

    def test_superres_pipeline_rejected(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL_LINE.format(seed=0, theta=0.0).replace("DAS", "ULM"))
        assert run(["beamform", cfg, "--out", tmp_path / "o"], capsys)[0] == 2

    def test_non_convergence_exits_4(self, tmp_path, capsys, monkeypatch):
        def fail(*args, **kwargs):
            raise NoConvergenceError("stopped", residual=0.5)

        monkeypatch.setattr(pipelines, "run_pipeline", fail)
        cfg = write(tmp_path, SMALL_LINE.format(seed=0, theta=0.0))
        code, _, err = run(["beamform", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 4 and "residual 0.5" in err


class TestMetricsCommand:
    def test_requires_ref(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL_LINE.format(seed=0, theta=0.0))
        assert run(["metrics", cfg, "--out", tmp_path], capsys)[0] == 2

    def test_compares_runs(self, tmp_path, capsys):
        for d, theta in (("a", 0.0), ("b", 0.0)):
            cfg = write(tmp_path, SMALL_LINE.format(seed=0, theta=theta), f"{d}.ini")
            assert run(["beamform", cfg, "--out", tmp_path / d], capsys)[0] == 0
        code, out, _ = run(["metrics", tmp_path / "a.ini", "--out", tmp_path / "a", "--ref",
                            tmp_path / "b"], capsys)
        assert code == 0 and out.strip() == "nrmse_vs_ref,0.0"


class TestSuperresCommand:
    def test_zero_density_gives_empty_map(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL_SUPERRES.format(density=0.0, extra=""))
        code, out, _ = run(["superres", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 0
        m = load_metrics_csv(tmp_path / "o" / "metrics.csv")
        assert m["map_total"] == 0.0 and m["n_localizations"] == 0.0
        assert read_pgm(tmp_path / "o" / "map.pgm").max() == 0
        assert "map_total,0.0" in out

    def test_localizes_simulated_bubbles(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL_SUPERRES.format(density=2.0, extra=""))
        assert run(["superres", cfg, "--out", tmp_path / "o"], capsys)[0] == 0
        m = load_metrics_csv(tmp_path / "o" / "metrics.csv")
        assert m["n_localizations"] > 0
        assert m["map_total"] == m["n_localizations"]
        assert m["loc_error_mean_m"] <= 0.25e-4

    def test_deterministic(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL_SUPERRES.format(density=2.0, extra="localizer = centroid"))
        for d in ("a", "b"):
            assert run(["superres", cfg, "--out", tmp_path / d], capsys)[0] == 0
        for name in ("map.pgm", "map.csv", "localizations.csv", "tracks.csv", "metrics.csv",
                     "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_sushi_method(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL_SUPERRES.format(density=2.0,
                                                    extra="method = sushi\nmax_iter = 200"))
        assert run(["superres", cfg, "--out", tmp_path / "o"], capsys)[0] == 0
        assert (tmp_path / "o" / "g2.pgm").exists()

    def test_frame_shape_mismatch_exits_2(self, tmp_path, capsys):
        np.save(tmp_path / "frames.npy", np.zeros((12, 16, 16)))
        cfg = write(tmp_path, SMALL_SUPERRES.format(density=1.0, extra="frames = frames.npy"))
        code, _, err = run(["superres", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 2 and "superres.frames" in err

    def test_frames_file_ingested(self, tmp_path, capsys):
        jj, ii = np.indices((32, 32))
        stack = np.zeros((12, 32, 32))
        for f in range(12):
            stack[f] = np.exp(-((jj - 10 - f) ** 2 + (ii - 16) ** 2) / (2 * 1.5 ** 2))
        np.save(tmp_path / "frames.npy", stack)
        cfg = write(tmp_path, SMALL_SUPERRES.format(
            density=1.0, extra="frames = frames.npy\nn_remove = 0\nlocalizer = centroid\n"
                               "max_displacement = 1.5e-4"))
        assert run(["superres", cfg, "--out", tmp_path / "o"], capsys)[0] == 0
        m = load_metrics_csv(tmp_path / "o" / "metrics.csv")
        assert m["n_localizations"] == 12 and m["n_tracks"] == 1
