import numpy as np
import pytest

from plumeinv import io
from plumeinv.core import SourceSet, Survey, wind_from_met
from plumeinv.optimizer import SourceGrid
from plumeinv.sampler import ChainTrace
from plumeinv.synth import ScenarioSpec, generate


def test_survey_round_trip_is_exact(tmp_path, track):
    io.write_survey(tmp_path / "s.csv", track)
    back = io.ingest_survey(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.times, track.times)
    np.testing.assert_array_equal(back.positions, track.positions)
    np.testing.assert_array_equal(back.concentrations, track.concentrations)
    np.testing.assert_allclose(back.winds, track.winds, rtol=0, atol=1e-12)


def test_northerly_wind_blows_south(tmp_path):
    text = ",".join(io.SURVEY_HEADER) + "\n0,0,0,100,1800,5,0\n3,10,0,100,1801,5,90\n"
    (tmp_path / "s.csv").write_text(text)
    s = io.ingest_survey(tmp_path / "s.csv")
    np.testing.assert_allclose(s.winds[0], [0.0, -5.0], atol=1e-12)
    np.testing.assert_allclose(s.winds[1], [-5.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("row,line,needle", [
    ("0,0,0,100,1800,5,0\n0,0,0,100,1800,5,0\n", 3, "increasing"),
    ("0,0,0,100,1800,5,0\n3,0,0,-1,1800,5,0\n", 3, "alt_m"),
    ("0,0,0,100,1800,5,0\n3,0,0,100,abc,5,0\n", 3, "non-numeric"),
    ("0,0,0,100,1800,5,0\n3,0,0,100,1800,5\n", 3, "fields"),
    ("0,0,0,100,1800,-2,0\n3,0,0,100,1800,5,0\n", 2, "wind_speed"),
])
def test_bad_survey_rows_name_the_line(tmp_path, row, line, needle):
    (tmp_path / "s.csv").write_text(",".join(io.SURVEY_HEADER) + "\n" + row)
    with pytest.raises(io.FormatError) as info:
        io.ingest_survey(tmp_path / "s.csv")
    assert info.value.line == line
    assert needle in str(info.value)


def test_bad_header_rejected(tmp_path):
    (tmp_path / "s.csv").write_text("a,b\n1,2\n")
    with pytest.raises(io.FormatError) as info:
        io.ingest_survey(tmp_path / "s.csv")
    assert info.value.line == 1


def test_grid_round_trip(tmp_path):
    grid = SourceGrid((-500.0, 250.0), 100.0, 4, 3)
    values = np.arange(12) / 7.0
    io.write_grid(tmp_path / "g.csv", grid, values)
    back = io.read_grid(tmp_path / "g.csv")
    assert (back.nx, back.ny, back.cell_size) == (4, 3, 100.0)
    np.testing.assert_allclose(back.origin, grid.origin)
    np.testing.assert_array_equal(back.rates, values)


def test_grid_out_of_order_rejected(tmp_path):
    grid = SourceGrid((0.0, 0.0), 1.0, 2, 2)
    c = grid.centers()[[1, 0, 2, 3]]
    io.write_table(tmp_path / "g.csv", io.GRID_HEADER, zip(c[:, 0], c[:, 1], [0.0] * 4))
    with pytest.raises(io.FormatError):
        io.read_grid(tmp_path / "g.csv")


def test_truth_round_trip(tmp_path):
    survey, truth = generate(ScenarioSpec(n_sources=2, seed=1))
    io.write_truth(tmp_path, truth, survey, {"abl_depth_m": 400.0})
    back = io.read_truth(tmp_path)
    np.testing.assert_array_equal(back.sources.locations, truth.sources.locations)
    np.testing.assert_array_equal(back.noiseless, truth.noiseless)
    np.testing.assert_array_equal(back.winds, truth.winds)
    assert back.wind_bias == truth.wind_bias


def test_trace_round_trip(tmp_path):
    t = ChainTrace()
    for k, m in enumerate([0, 2, 1]):
        t.iterations.append(10 * k)
        t.sources.append(np.random.default_rng(k).uniform(size=(m, 4)))
        for name in ("sigma", "bias", "gamma_h", "gamma_v", "log_post"):
            getattr(t, name).append(0.1 * k + 1 / 3)
        t.background.append(np.full(4, 1800.0 + k))
        t.plume.append(np.arange(4.0) * k)
    t.proposed["birth"], t.accepted["birth"] = 7, 3
    io.write_trace(tmp_path, t)
    back = io.read_trace(tmp_path)
    assert back.iterations == t.iterations
    assert back.sigma == t.sigma
    for a, b in zip(back.sources, t.sources):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(np.array(back.background), np.array(t.background))
    assert back.proposed["birth"] == 7 and back.accepted["birth"] == 3


def test_sources_round_trip(tmp_path):
    src = SourceSet.from_arrays([[1.5, 2.5], [3.0, 4.0]], [10.0, 20.0], [0.1, 1 / 3])
    io.write_sources(tmp_path / "s.csv", src)
    back = io.read_sources(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.rates, src.rates)
    np.testing.assert_array_equal(back.locations, src.locations)
