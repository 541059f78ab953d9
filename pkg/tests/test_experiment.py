import csv
from dataclasses import replace

import numpy as np
import pytest

from derlab import config as C
from derlab import data, experiment
from derlab.losses import LossConfig, LossKind
from derlab.network import Architecture
from derlab.uncertainty import Convention

TINY = replace(
    C.PRESETS["cubic-der"],
    arch=Architecture(hidden=((12, "relu"), (12, "relu"))),
    data=C.DataSpec("cubic", 120, {"x_lo": -4.0, "x_hi": 4.0, "noise_std": 3.0}),
    epochs=15,
    batch_size=40,
    trace_grid=C.GridSpec(-7.0, 7.0, 15),
    eval_grid=C.GridSpec(-7.0, 7.0, 29),
    seeds=(0, 1),
)


def test_zero_epochs_gives_only_the_initial_trace():
    cfg = replace(TINY, epochs=0)
    run = experiment.train_run(cfg, experiment.dataset_for_seed(cfg, 0), 0)
    assert run.trace_epochs == [0]
    assert run.losses == []


def test_training_reduces_loss_on_cubic():
    cfg = replace(TINY, epochs=60, data=replace(TINY.data, n=400), optimizer=C.OptimizerSpec(learning_rate=5e-3))
    run = experiment.train_run(cfg, experiment.dataset_for_seed(cfg, 0), 0)
    assert run.losses[-1] < run.losses[0]
    assert len(run.losses) == 60


def test_gaussian_alt_large_lambda_keeps_nu_positive_and_finite():
    cfg = replace(TINY, loss=LossConfig(LossKind.GAUSSIAN_ALT, 2.0), optimizer=C.OptimizerSpec(learning_rate=5e-3), epochs=30)
    run = experiment.train_run(cfg, experiment.dataset_for_seed(cfg, 0), 0)
    nu = run.trace_array("nu")
    assert np.all(np.isfinite(nu)) and np.all(nu > 0)
    assert np.isnan(run.trace_array("u_al")).all()
    assert np.array_equal(run.trace_array("w_st"), run.trace_array("u_al_p"))


def test_trace_cadence_includes_last_epoch():
    cfg = replace(TINY, epochs=7, trace_every=3)
    run = experiment.train_run(cfg, experiment.dataset_for_seed(cfg, 0), 0)
    assert run.trace_epochs == [0, 3, 6, 7]


def test_runs_are_bit_reproducible():
    ds = experiment.dataset_for_seed(TINY, 0)
    a = experiment.train_run(TINY, ds, 0)
    b = experiment.train_run(TINY, ds, 0)
    assert a.params.flatten().tobytes() == b.params.flatten().tobytes()
    assert all(np.array_equal(a.trace_array(k), b.trace_array(k)) for k in experiment.TRACE_FIELDS)


def test_trace_identities_hold_at_every_epoch():
    run = experiment.train_run(TINY, experiment.dataset_for_seed(TINY, 1), 1)
    for t in run.traces:
        assert np.allclose(t["u_ep_p"] * t["u_al"], t["u_ep"], rtol=1e-12, atol=0)
        assert np.allclose(t["w_st"], t["sqrt_beta_over_alpha"] / t["sqrt_nu_over_1p_nu"], rtol=1e-12, atol=0)
        assert np.allclose(t["residual"], t["gamma"] - t.x**3, rtol=0, atol=1e-12)


def test_single_seed_aggregate_equals_the_run():
    res = experiment.multi_seed(replace(TINY, seeds=(4,)))
    run = res.runs[0]
    for k in experiment.TRACE_FIELDS:
        assert np.array_equal(res.aggregate.mean[k], run.trace_array(k), equal_nan=True)
        assert np.all(res.aggregate.std[k] == 0.0)


def test_identical_seeds_have_zero_spread():
    res = experiment.multi_seed(replace(TINY, seeds=(3, 3)))
    for k in ("gamma", "nu", "alpha", "beta", "u_ep_p"):
        assert np.all(res.aggregate.std[k] == 0.0)


def test_aggregate_matches_two_pass_computation():
    res = experiment.multi_seed(replace(TINY, seeds=(0, 1, 2)))
    stack = np.stack([r.trace_array("nu") for r in res.runs])
    mean = stack.sum(axis=0) / 3
    var = ((stack - mean) ** 2).sum(axis=0) / 3
    assert np.allclose(res.aggregate.mean["nu"], mean, rtol=1e-14, atol=0)
    assert np.allclose(res.aggregate.std["nu"], np.sqrt(var), rtol=1e-12, atol=1e-300)
    assert res.aggregate.n_runs == 3


def test_parallel_results_match_serial():
    serial = experiment.multi_seed(TINY, jobs=1)
    parallel = experiment.multi_seed(TINY, jobs=2)
    for a, b in zip(serial.runs, parallel.runs):
        assert a.seed == b.seed
        assert a.params == b.params


def test_datasets_differ_per_seed():
    a, b = experiment.dataset_for_seed(TINY, 0), experiment.dataset_for_seed(TINY, 1)
    assert not np.array_equal(a.x, b.x)


def test_diverging_run_is_reported_and_excluded():
    def gen(seed):
        ds = experiment.dataset_for_seed(TINY, seed)
        if seed == 1:
            return data.Dataset(ds.x, ds.y * 1e160, metadata=ds.metadata)
        return ds

    res = experiment.multi_seed(TINY, data_generator=gen)
    assert [r.seed for r in res.runs] == [0]
    assert len(res.failures) == 1 and res.failures[0][0] == 1
    assert "epoch 1" in res.failures[0][1]
    assert res.aggregate.n_runs == 1


def test_divergence_diagnostic_carries_context():
    ds = experiment.dataset_for_seed(TINY, 0)
    bad = data.Dataset(ds.x, ds.y * 1e160, metadata=ds.metadata)
    with pytest.raises(experiment.TrainingDiverged) as info:
        experiment.train_run(TINY, bad, 0)
    exc = info.value
    assert exc.epoch == 1 and 0 <= exc.sample < len(ds)
    assert exc.params.shape == (TINY.arch.n_params,)


def test_sota_proxy_reports_limit_when_alpha_rounds_to_one():
    from derlab.network import NIGParams

    est = experiment._sota_with_limit(NIGParams(np.zeros(2), np.ones(2), np.array([1.0, 3.0]), np.full(2, 2.0)))
    assert np.isinf(est.aleatoric[0]) and np.isinf(est.epistemic[0])
    assert est.aleatoric[1] == 1.0


def test_evaluate_grid_empty_and_conventions():
    run = experiment.train_run(TINY, experiment.dataset_for_seed(TINY, 0), 0)
    assert experiment.evaluate_grid(run.params, "nig", []).x.size == 0
    ev = experiment.evaluate_grid(run.params, "nig", [0.0, 1.0])
    assert set(ev.estimates) == {Convention.SOTA, Convention.PROPOSED}
    assert run.final.x.size == 29


def test_naive_extension_control_without_regularizer_stays_finite():
    cfg = replace(C.PRESETS["naive-momentum"], epochs=10)
    ds = data.gen_cubic(1000, seed=2)
    traj = experiment.naive_extension_demo(ds, 0.0, cfg)
    assert traj.epochs == list(range(11))
    assert traj.nu.shape == (11, 81)
    assert np.all(np.isfinite(traj.nu)) and np.all(traj.nu > 0)


def test_csv_exports(tmp_path):
    res = experiment.multi_seed(replace(TINY, epochs=2))
    experiment.write_trace_csv(tmp_path / "t.csv", res.runs)
    experiment.write_aggregate_csv(tmp_path / "a.csv", res.aggregate)
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["seed", "epoch", "x", *experiment.TRACE_FIELDS]
    assert len(rows) == 1 + 2 * 3 * 15
    with open(tmp_path / "a.csv") as fh:
        header = next(csv.reader(fh))
    assert header[:4] == ["epoch", "x", "gamma_mean", "gamma_std"]
    assert len(header) == 2 + 2 * len(experiment.TRACE_FIELDS)


# ---------------------------------------------------------------------------
# configuration


def test_presets_encode_protocols():
    p = C.PRESETS
    assert (p["cubic-der"].loss.kind, p["cubic-der"].loss.lam, p["cubic-der"].optimizer.learning_rate, p["cubic-der"].epochs) == (
        LossKind.DER_ORIGINAL, 0.01, 5e-4, 500,
    )  # fmt: skip
    assert (p["cubic-gaussian"].loss.kind, p["cubic-gaussian"].loss.lam, p["cubic-gaussian"].optimizer.learning_rate) == (
        LossKind.GAUSSIAN_ALT, 2.0, 5e-3,
    )  # fmt: skip
    assert (p["pulse-der"].loss.lam, p["pulse-der"].optimizer.learning_rate, p["pulse-der"].epochs) == (0.01, 1e-3, 600)


def test_config_errors_list_every_problem():
    with pytest.raises(C.ConfigError) as info:
        C.config_from_dict({"epochs": -1, "optimizer": {"learning_rate": -1.0}, "batch_size": -2})
    assert len(info.value.problems) == 3
    with pytest.raises(C.ConfigError) as info:
        C.config_from_dict({"bogus": 1, "loss": {"p": 7}})
    assert len(info.value.problems) == 2


def test_config_round_trip_through_json(tmp_path):
    cfg = C.PRESETS["pulse-der-normalized"]
    path = tmp_path / "c.json"
    path.write_text(cfg.dumps())
    assert C.load_config(path) == cfg


def test_config_file_may_start_from_preset(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"preset": "cubic-gaussian", "epochs": 12}')
    cfg = C.load_config(path)
    assert cfg.epochs == 12 and cfg.loss.lam == 2.0


def test_grid_points_are_symmetric():
    pts = C.GridSpec(0.0, 1.0, 101).points()
    assert np.array_equal(np.round(pts - 0.5, 12), -np.round(pts - 0.5, 12)[::-1])
    assert 4.0 in C.GridSpec(-7.0, 7.0, 141).points()


def test_parse_hidden():
    assert C.parse_hidden("64:relu,32:tanh") == ((64, "relu"), (32, "tanh"))
    with pytest.raises(ValueError):
        C.parse_hidden("64:gelu")
