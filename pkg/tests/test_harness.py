import json
import textwrap
from dataclasses import replace

import numpy as np
import pytest

from rnfloc import harness, metrics, radar, rng
from rnfloc.errors import InvalidInputError, NotFoundError

SMALL = harness.ExperimentSpec(scenario={"name": "scenario1-2d"}, snr_sweep=(10.0, 20.0),
                               methods=("rnfnn", "mlpnn", "lpnn"), trials=4, master_seed=5)


@pytest.fixture(scope="module")
def small_result():
    return harness.run_experiment(SMALL)


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        replace(SMALL, methods=("rnfnn", "newton"))
    with pytest.raises(InvalidInputError):
        replace(SMALL, trials=0)
    with pytest.raises(InvalidInputError):
        replace(SMALL, snr_sweep=())
    with pytest.raises(InvalidInputError):
        replace(SMALL, target_mode="orbit")


def test_points_cross_product():
    spec = replace(SMALL, antenna_variance=(1.0, 10.0))
    assert spec.points == [(10.0, 1.0), (10.0, 10.0), (20.0, 1.0), (20.0, 10.0)]
    assert SMALL.points == [(10.0, None), (20.0, None)]


def test_load_spec_from_toml(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(textwrap.dedent("""
        [scenario]
        name = "scenario2-3d"
        target_mode = "uniform-box"

        [noise]
        k2 = 500.0

        [solver]
        rho = 0.2
        dt = "auto"
        max_iters = 2e5

        [sweep]
        snr_db = [0, 10]
        antenna_variance = 10.0
        methods = ["rnfnn", "oracle"]
        trials = 7
        master_seed = 99

        [output]
        dir = "out"
        workers = 2
    """))
    spec = harness.load_spec(path)
    assert spec.scenario == {"name": "scenario2-3d"}
    assert spec.target_mode == "uniform-box"
    assert spec.k2 == 500.0
    assert spec.solver.rho == 0.2 and spec.solver.dt is None and spec.solver.max_iters == 200000
    assert spec.points == [(0.0, 10.0), (10.0, 10.0)]
    assert spec.methods == ("rnfnn", "oracle") and spec.trials == 7 and spec.master_seed == 99
    assert spec.output == "out" and spec.workers == 2


def test_spec_rejects_unknown_sections():
    with pytest.raises(InvalidInputError):
        harness.spec_from_dict({"scenario": {"name": "scenario1-2d"}, "sweep": {"snr_db": 0}, "plot": {}})
    with pytest.raises(InvalidInputError):
        harness.spec_from_dict({"sweep": {"snr_db": 0}})
    with pytest.raises(InvalidInputError):
        harness.spec_from_dict({"scenario": {"name": "scenario1-2d"}, "sweep": {"snr_db": 0},
                                "solver": {"stepsize": 1}})


def test_unknown_scenario_name():
    spec = replace(SMALL, scenario={"name": "scenario9"})
    with pytest.raises(NotFoundError):
        harness.run_trial(spec, 0, 0)


def test_trial_seeds_distinct_and_stable():
    seeds = {harness.trial_seed(SMALL, p, t) for p in range(2) for t in range(50)}
    assert len(seeds) == 100
    assert harness.trial_seed(SMALL, 1, 3) == rng.derive_seed(5, 1, 3)


def test_uniform_box_targets():
    spec = replace(SMALL, scenario={"name": "scenario2-3d"}, target_mode="uniform-box")
    targets = np.array([harness.trial_scenario(spec, harness.trial_seed(spec, 0, t)).target for t in range(200)])
    assert np.all(np.abs(targets[:, :2]) <= 1000) and np.all((targets[:, 2] >= 0) & (targets[:, 2] <= 1000))
    assert np.unique(targets[:, 0]).size == 200


def test_random_circle_trials():
    spec = replace(SMALL, scenario={"random_circle": {"m": 4, "n": 5, "radius": 2000.0}})
    a = harness.trial_scenario(spec, 1)
    b = harness.trial_scenario(spec, 2)
    assert a.m == 4 and a.n == 5
    assert not np.array_equal(a.transmitters, b.transmitters)


def test_run_trial_replays(small_result):
    o = harness.run_trial(SMALL, 1, 2)
    ref = small_result.outcomes[1 * SMALL.trials + 2]
    assert (ref.point, ref.trial, ref.seed) == (1, 2, o.seed)
    for m in SMALL.methods:
        np.testing.assert_array_equal(o.estimates[m], ref.estimates[m])


def test_methods_share_measurements_but_not_inits(small_result):
    o = small_result.outcomes[0]
    assert not np.array_equal(o.estimates["mlpnn"], o.estimates["lpnn"])
    assert len({rng.method_stream(m) for m in harness.METHODS}) == len(harness.METHODS)


def test_reports(small_result):
    sc = radar.builtin_scenario("scenario1-2d")
    for p, (snr, _) in enumerate(SMALL.points):
        rep = small_result.reports["rnfnn"][p]
        assert rep.trials == 4 and rep.snr_db == snr
        _, root = metrics.crlb(sc, radar.noise_from_snr(sc, snr))
        assert rep.root_crlb == pytest.approx(root, rel=1e-12)
        assert rep.rmse == pytest.approx(metrics.rmse(
            [o.estimates["rnfnn"] for o in small_result.outcomes if o.point == p], sc.target))
        assert rep.convergence_rate == 1.0
    assert small_result.reports["rnfnn"][0].rm_counts == {"per_iteration": 57}
    assert small_result.reports["mlpnn"][0].rm_counts == {"per_iteration": 81}


def test_sweep_table_format(small_result):
    lines = small_result.sweep_table("rnfnn").splitlines()
    assert lines[0] == ",".join(metrics.SWEEP_HEADER)
    assert len(lines) == 3
    assert lines[1].split(",")[0] == "10.0" and lines[1].split(",")[-1] == "4"


def test_trials_table(small_result):
    lines = small_result.trials_table("mlpnn").splitlines()
    assert lines[0] == ",".join(harness.TRIAL_HEADER)
    assert len(lines) == 1 + 8
    first = lines[1].split(",")
    assert first[:3] == ["0", "0", str(harness.trial_seed(SMALL, 0, 0))]


def test_write_outputs(tmp_path, small_result):
    small_result.write(tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["manifest.json", "sweep_lpnn.csv", "sweep_mlpnn.csv", "sweep_rnfnn.csv",
                     "trials_lpnn.csv", "trials_mlpnn.csv", "trials_rnfnn.csv"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["spec"]["master_seed"] == 5
    assert manifest["method_streams"]["rnfnn"] == rng.method_stream("rnfnn")
    assert len(manifest["reports"]["rnfnn"]) == 2
    assert "numpy" in manifest["versions"]


def test_rerun_is_byte_identical(small_result):
    again = harness.run_experiment(SMALL)
    for m in SMALL.methods:
        assert again.sweep_table(m) == small_result.sweep_table(m)
        assert again.trials_table(m) == small_result.trials_table(m)


def test_worker_count_does_not_change_results(small_result):
    parallel = harness.run_experiment(replace(SMALL, workers=2))
    for m in SMALL.methods:
        assert parallel.sweep_table(m) == small_result.sweep_table(m)


def test_master_seed_changes_results(small_result):
    other = harness.run_experiment(replace(SMALL, master_seed=6, methods=("rnfnn",)))
    assert other.sweep_table("rnfnn") != small_result.sweep_table("rnfnn")


def test_antenna_sweep_and_oracle():
    spec = harness.ExperimentSpec(scenario={"name": "scenario1-2d"}, snr_sweep=(20.0,),
                                  antenna_variance=(10.0,), methods=("rnfnn", "mlpnn", "oracle"),
                                  trials=2, master_seed=1)
    res = harness.run_experiment(spec)
    header = res.sweep_table("rnfnn").splitlines()[0].split(",")
    assert header[-1] == "sigma2_p"
    assert res.reports["oracle"][0].mean_iterations == 0
    sc = radar.builtin_scenario("scenario1-2d")
    noise = radar.noise_from_snr(sc, 20.0, antenna_variance=10.0)
    assert res.reports["rnfnn"][0].root_crlb == pytest.approx(metrics.crlb_with_antenna_errors(sc, noise)[1])


def test_crlb_sweep():
    rows = harness.crlb_sweep(SMALL)
    assert [r["snr_db"] for r in rows] == [10.0, 20.0]
    assert rows[0]["root_crlb"] == pytest.approx(10 ** 0.5 * rows[1]["root_crlb"])
