import copy
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from asymrls.errors import ConfigError
from asymrls.harness import (CSV_COLUMNS, empirical_distortion, generate_instance, load_config,
                             parse_config, records_to_rows, replica_prediction, run_experiment,
                             trial_seed)
from asymrls.replica import DistortionSpec
from asymrls.signal_model import sample_signal

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="module")
def raw():
    return json.loads((CONFIGS / "two_block.json").read_text())


@pytest.fixture(scope="module")
def cfg():
    return load_config(CONFIGS / "two_block.json")


@pytest.mark.parametrize("name", ["two_block.json", "bpsk_ordinary.json", "bpsk_box.json"])
def test_shipped_configs_parse(name):
    c = load_config(CONFIGS / name)
    assert c.M == round(c.rho * c.N)
    assert len(c.config_hash()) == 16


def test_noiseless_measurements(cfg):
    c = replace(cfg, sigma2=0.0)
    A, x, y = generate_instance(c, 5)
    assert np.array_equal(y, A @ x)


def test_row_orthogonal_matrix(raw):
    r = copy.deepcopy(raw)
    r["matrix"] = {"kind": "row_orthogonal"}
    r["solver"] = {"kind": "reference"}
    A, _, _ = generate_instance(parse_config(r), 1)
    assert np.allclose(A @ A.T, np.eye(A.shape[0]), atol=1e-12)


def test_column_norms_concentrate(cfg):
    c = replace(cfg, N=2048)
    A, _, _ = generate_instance(c, 3)
    norms = np.sum(A * A, axis=0)
    # each squared column norm is chi^2_M / M
    assert abs(norms.mean() - 1.0) <= 5 * math.sqrt(2 / c.M / c.N)
    assert norms.std() == pytest.approx(math.sqrt(2 / c.M), rel=0.1)


def test_instances_are_deterministic(cfg):
    a = generate_instance(cfg, trial_seed(7, 3))
    b = generate_instance(cfg, trial_seed(7, 3))
    c = generate_instance(cfg, trial_seed(7, 4))
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
    assert not np.array_equal(a[0], c[0])


def test_block_layout_matches_fractions(cfg):
    x = sample_signal(replace(cfg, N=20000).signal_model(), 0)
    half = 10000
    assert np.mean(x[:half] != 0) == pytest.approx(0.1, abs=0.015)
    assert np.mean(x[half:] != 0) == pytest.approx(0.4, abs=0.02)


def test_empirical_distortions():
    x = np.array([1.0, -1.0, 0.0, 0.0])
    xh = np.array([0.5, 1.0, 0.0, 0.2])
    assert empirical_distortion(xh, x, DistortionSpec("squared_error")) == pytest.approx((0.25 + 4 + 0.04) / 4)
    assert empirical_distortion(xh, x, DistortionSpec("sign_error")) == pytest.approx(0.5)
    assert empirical_distortion(xh, x, DistortionSpec("support_error")) == pytest.approx(0.25)
    assert empirical_distortion(xh, x, DistortionSpec("support_error", 0.3)) == pytest.approx(0.0)


def test_thread_count_does_not_change_results(cfg):
    c = replace(cfg, N=256)
    r1, a1 = run_experiment(c, 3, threads=1)
    r2, a2 = run_experiment(c, 3, threads=3)
    assert records_to_rows(r1, c) == records_to_rows(r2, c)
    assert a1.mean == a2.mean


def test_rows_have_frozen_columns(cfg):
    c = replace(cfg, N=128)
    recs, agg = run_experiment(c, 2)
    rows = records_to_rows(recs, c)
    assert len(rows) == 2 * len(c.distortions)
    assert all(tuple(r) == CSV_COLUMNS for r in rows)
    assert all(r["status"] == "ok" for r in rows)
    assert agg.failures == 0


def test_gap_to_prediction_shrinks_with_n(cfg):
    _, pred = replica_prediction(cfg)
    p = pred["squared_error"]
    spread = {}
    for N in (128, 2048):
        recs, _ = run_experiment(replace(cfg, N=N), 6, predict=False)
        errs = [r.empirical["squared_error"] - p for r in recs]
        spread[N] = math.sqrt(np.mean(np.square(errs)))
    assert spread[2048] < spread[128]


def test_failed_solve_is_recorded(cfg):
    c = replace(cfg, N=128, solver=replace(cfg.solver, max_iter=2))
    recs, agg = run_experiment(c, 2, predict=False)
    assert all(r.status == "failed:NonConvergence" for r in recs)
    assert agg.failures == 2 and math.isnan(agg.mean["squared_error"])


@pytest.mark.parametrize("edit,path", [
    (lambda r: r.pop("N"), "N"),
    (lambda r: r.update(rho=-1), "rho"),
    (lambda r: r["signal"]["blocks"][1].update(mu=2.0), "signal.blocks[1].mu"),
    (lambda r: r["signal"]["blocks"][0].update(frac=0.7), "signal.blocks"),
    (lambda r: r["penalty"]["blocks"].pop(), "penalty.blocks"),
    (lambda r: r["penalty"].update(support="cube"), "penalty.support"),
    (lambda r: r["matrix"].update(kind="row_orthogonal"), "solver.kind"),
    (lambda r: r["distortions"][0].update(kind="l0"), "distortions[0].kind"),
    (lambda r: r["signal"].update(field="complex"), "signal.field"),
    (lambda r: r.update(N="many"), "N"),
])
def test_config_errors_name_the_field(raw, edit, path):
    r = copy.deepcopy(raw)
    edit(r)
    with pytest.raises(ConfigError) as err:
        parse_config(r)
    assert err.value.path == path


def test_missing_file_names_the_path(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(tmp_path / "nope.json")
    assert "nope.json" in str(err.value)


def test_hash_tracks_content(cfg):
    assert cfg.config_hash() == load_config(CONFIGS / "two_block.json").config_hash()
    assert replace(cfg, seed=1).config_hash() != cfg.config_hash()
