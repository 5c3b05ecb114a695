import json

import numpy as np
import pytest

from plumeinv.cli import main
from plumeinv.config import ConfigError, RunConfig

SMALL = ["--set", "synth.width=6000", "--set", "synth.height=6000", "--set", "synth.n_sources=2",
         "--set", "synth.duration=900", "--set", "synth.pass_spacing=1500", "--set", "grid.cell_size=1000",
         "--set", "sampler.iterations=120", "--set", "sampler.burn_in=20", "--set", "sampler.init_k=3",
         "--set", "optimizer.max_outer=20"]


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    for cmd in ("simulate", "optimize", "infer", "report"):
        assert run(cmd, "--out", str(out), "--seed", "3", *SMALL) == 0, cmd
    return out


def test_pipeline_writes_every_product(pipeline):
    for name in ("survey.csv", "truth.json", "optimize_rates.csv", "optimize_beta.csv", "optimize.json",
                 "trace/trace_scalars.csv", "trace/acceptance.csv", "report_median.csv", "report_lower.csv",
                 "report_upper.csv", "report_background.csv", "report_residuals.csv", "report_acceptance.csv",
                 "report_score.json"):
        assert (pipeline / name).exists(), name
    rec = json.loads((pipeline / "report_score.json").read_text())
    assert rec["hits"] + rec["misses"] == 2
    rows = (pipeline / "trace/trace_scalars.csv").read_text().splitlines()
    assert len(rows) == 1 + 100


def test_same_seed_gives_identical_trace(pipeline, tmp_path):
    for name in ("survey.csv", "truth.json", "truth_sources.csv", "truth_series.csv", "optimize_rates.csv",
                 "optimize_beta.csv"):
        (tmp_path / name).write_bytes((pipeline / name).read_bytes())
    assert run("infer", "--out", str(tmp_path), "--seed", "3", *SMALL) == 0
    for name in ("trace_scalars.csv", "trace_sources.csv", "trace_background.npy", "acceptance.csv"):
        assert (tmp_path / "trace" / name).read_bytes() == (pipeline / "trace" / name).read_bytes()


def test_infer_without_optimize_is_a_usage_error(tmp_path, capsys):
    assert run("simulate", "--out", str(tmp_path), *SMALL) == 0
    assert run("infer", "--out", str(tmp_path), *SMALL) == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["command"] == "infer" and rec["exit_code"] == 2


def test_infer_from_explicit_sources(pipeline, tmp_path):
    (tmp_path / "survey.csv").write_bytes((pipeline / "survey.csv").read_bytes())
    (tmp_path / "init.csv").write_text("east_m,north_m,half_width_m,rate_m3s\n3000,3000,50,0.05\n")
    assert run("infer", "--out", str(tmp_path), "--init", str(tmp_path / "init.csv"), *SMALL) == 0


def test_unknown_config_key(tmp_path, capsys):
    assert run("simulate", "--out", str(tmp_path), "--set", "synth.nope=1") == 2
    assert "synth.nope" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        RunConfig({"sampler.bogus": 1})


def test_config_file_round_trip(tmp_path):
    cfg = RunConfig()
    cfg["synth.wind_dir"] = "200,210"
    cfg["sampler.sample_angles"] = "yes"
    (tmp_path / "c.cfg").write_text(cfg.dumps())
    back = RunConfig.from_file(tmp_path / "c.cfg")
    assert back["synth.wind_dir"] == (200.0, 210.0)
    assert back["sampler.sample_angles"] is True
    assert np.isnan(back["optimizer.lam"])


def test_bad_config_line_is_reported(tmp_path):
    (tmp_path / "c.cfg").write_text("# comment\nsampler.iterations=abc\n")
    with pytest.raises(ConfigError, match=":2:"):
        RunConfig.from_file(tmp_path / "c.cfg")


def test_missing_survey_is_a_usage_error(tmp_path):
    assert run("optimize", "--out", str(tmp_path)) == 2
