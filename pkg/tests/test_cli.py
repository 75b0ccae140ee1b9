from __future__ import annotations

import csv

import numpy as np
import pytest

from boragp.cli import main
from boragp.io import read_edges, write_points


@pytest.fixture
def workdir(tmp_path):
    rng = np.random.default_rng(0)
    locs = rng.uniform(0, 2, (40, 2))
    locs = locs[np.abs(locs[:, 1] - 1.0) > 0.05]
    y = 1.0 + np.sin(3 * locs[:, 0]) + 0.1 * rng.standard_normal(len(locs))
    write_points(tmp_path / "p.csv", locs, y)
    write_points(tmp_path / "new.csv", np.array([[0.5, 0.5], [1.5, 1.5], [0.3, 1.7]]))
    (tmp_path / "b.wkt").write_text("LINESTRING (0 1, 1.4 1)\n")
    (tmp_path / "run.cfg").write_text("iterations = 400\nburn_in = 200\n")
    return tmp_path


def test_neighbors_command(workdir):
    out = workdir / "e.csv"
    rc = main(["neighbors", "--points", str(workdir / "p.csv"), "--barriers", str(workdir / "b.wkt"),
               "--m", "5", "--order", "y", "--out", str(out)])
    assert rc == 0
    rows = read_edges(out)
    assert rows and all(r[0] > r[1] for r in rows)


def test_fit_predict_is_deterministic(workdir):
    outs = []
    for run in range(2):
        chain = workdir / f"chain{run}.npz"
        pred = workdir / f"pred{run}.csv"
        common = ["--barriers", str(workdir / "b.wkt"), "--config", str(workdir / "run.cfg"), "--seed", "4"]
        assert main(["fit", "--points", str(workdir / "p.csv"), "--m", "6", "--order", "y", "--out", str(chain)] + common) == 0
        assert main(["predict", "--points", str(workdir / "new.csv"), "--chain", str(chain), "--seed", "4",
                     "--clamp-nonnegative", "--out", str(pred)]) == 0
        outs.append(pred.read_bytes())
    assert outs[0] == outs[1]
    with (workdir / "pred0.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header == ["x", "y", "w_mean", "w_sd", "y_mean", "y_sd", "y_q025", "y_q975"]


def test_missing_points_is_usage_error(workdir, capsys):
    assert main(["neighbors", "--out", str(workdir / "e.csv")]) != 0
    assert "usage" in capsys.readouterr().err


def test_bad_input_reports_error(workdir, capsys):
    (workdir / "bad.wkt").write_text("POINT (1 1)\n")
    rc = main(["neighbors", "--points", str(workdir / "p.csv"), "--barriers", str(workdir / "bad.wkt"),
               "--out", str(workdir / "e.csv")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_variogram_simulate_score(workdir):
    assert main(["variogram", "--points", str(workdir / "p.csv"), "--bins", "6", "--out",
                 str(workdir / "v.csv")]) == 0
    sim = workdir / "sim.csv"
    assert main(["simulate", "--points", str(workdir / "p.csv"), "--m", "5", "--seed", "1", "--out", str(sim),
                 "--dump-factors", str(workdir / "f.csv")]) == 0
    assert (workdir / "f.csv").exists()
    chain = workdir / "c.npz"
    main(["fit", "--points", str(workdir / "p.csv"), "--config", str(workdir / "run.cfg"), "--out", str(chain)])
    pred = workdir / "pred.csv"
    assert main(["predict", "--points", str(workdir / "p.csv"), "--chain", str(chain), "--out", str(pred)]) == 0
    assert main(["score", "--pred", str(pred), "--truth", str(workdir / "p.csv"), "--out",
                 str(workdir / "s.csv")]) == 0
