from __future__ import annotations

import numpy as np
import pytest

from boragp.config import ExperimentConfig, read_flat_config
from boragp.covariance import base_cov
from boragp.errors import InvalidSpec
from boragp.experiments import (
    DOORS_GRID,
    DOORS_PROBES,
    DOORS_SPEC,
    FaultsTruth,
    faults_barriers,
    run_sliding_doors_demo,
)


@pytest.fixture(scope="module")
def doors():
    return run_sliding_doors_demo(write=False)


def test_doors_reference_count(doors):
    assert doors["setup"].dag.k == 189


def test_doors_reference_self_covariance(doors):
    setup = doors["setup"]
    diag = np.diag(setup.factors.dense_covariance())
    assert np.all(diag <= 1.0 + 1e-12)
    # nodes conditioning on every predecessor keep the full sill
    m = setup.dag.m
    np.testing.assert_allclose(diag[: m + 1], 1.0, rtol=0, atol=1e-12)
    # the first row is collinear and the exponential kernel is Markov along a
    # line, so it stays exact too; beyond the first two rows every node loses variance
    rows = np.unique(setup.dag.refs[:, 1])
    later = setup.dag.refs[:, 1] > rows[1]
    assert np.all(diag[later] < 1.0 - 1e-9)
    for probe, ns, _ in doors["fields"].values():
        at = np.flatnonzero(np.all(setup.points == probe, axis=1))[0]
        assert ns[at] <= 1.0


def test_doors_stationary_field_is_radial(doors):
    setup = doors["setup"]
    for probe, _, st in doors["fields"].values():
        d = np.hypot(*(setup.points - probe).T)
        np.testing.assert_allclose(st, base_cov(d, DOORS_SPEC), rtol=0, atol=1e-12)
        key = np.round(d, 9)
        for v in np.unique(key)[:50]:
            same = st[key == v]
            assert np.ptp(same) <= 1e-12


def test_doors_across_versus_opening(doors):
    setup = doors["setup"]
    vals = {}
    for (ix, iy), (probe, ns, st) in doors["fields"].items():
        target = setup.point(ix, DOORS_GRID - 1 - iy)
        at = np.flatnonzero(np.all(setup.points == target, axis=1))[0]
        vals[ix] = (ns[at], st[at])
    opening = vals[28][0]
    for ix in (14, 42):
        across, stationary = vals[ix]
        assert across < stationary
        assert opening > across
    assert len(DOORS_PROBES) == 3


def test_faults_truth_is_reproducible():
    cfg = ExperimentConfig(grid_size=25, seeds=(1,))
    truth = FaultsTruth(cfg)
    a, b = truth.simulate(3), truth.simulate(3)
    assert np.array_equal(a.y, b.y)
    assert not np.any(faults_barriers(cfg).contains(a.locations))


def test_config_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# faults study\nexperiment = faults\nseeds = 1, 2, 3\nfault1 = 0, 1.7, 0.7\niterations = 50\n"
                    "burn_in = 10\n")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.seeds == (1, 2, 3) and cfg.fault1 == (0.0, 1.7, 0.7) and cfg.iterations == 50
    assert read_flat_config(path)["experiment"] == "faults"
    with pytest.raises(InvalidSpec):
        ExperimentConfig(seeds=(1, 1))
    with pytest.raises(InvalidSpec):
        ExperimentConfig.from_mapping({"bogus": "1"})
