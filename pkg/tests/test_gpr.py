import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rendezvous.gpr import (
    Dataset,
    InsufficientDataError,
    KernelConfig,
    benchmark_fit,
    fit,
    log_marginal_likelihood,
    matern,
    predict,
    tune_hyperparameters,
)

from oracles import dense_gp, matern32

CFG = KernelConfig(nu=1.5, length_scale=0.5, signal_variance=1.0, noise_variance=0.0625)


def stream(M, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(1, M + 1) * 0.1
    x = 8.0 + np.sin(t / 10.0)
    return x, np.sign(x - 8.0) + 0.25 * rng.standard_normal(M)


def test_matern_values():
    r = np.array([0.0, 0.5, 1.0])
    for nu, expect in [
        (0.5, np.exp(-r / 0.5)),
        (1.5, (1 + np.sqrt(3) * r / 0.5) * np.exp(-np.sqrt(3) * r / 0.5)),
        (2.5, (1 + np.sqrt(5) * r / 0.5 + 5 * r ** 2 / 0.75) * np.exp(-np.sqrt(5) * r / 0.5)),
    ]:
        k = matern(np.zeros(1), r, KernelConfig(nu=nu, length_scale=0.5, signal_variance=2.0))
        np.testing.assert_allclose(k[0], 2.0 * expect, rtol=1e-12)


def test_kernel_config_validation():
    with pytest.raises(ValueError):
        KernelConfig(nu=2.0)
    with pytest.raises(ValueError):
        KernelConfig(length_scale=0.0)
    with pytest.raises(ValueError):
        KernelConfig(noise_variance=-1.0)


def test_full_gp_matches_dense_oracle():
    rng = np.random.default_rng(1)
    X = rng.uniform(7, 9, 40)
    Y = np.sin(3 * X) + 0.1 * rng.standard_normal(40)
    Xs = np.linspace(6.5, 9.5, 31)
    model = fit((X, Y), CFG, kind="full")
    mu, var = predict(model, Xs)
    mu_o, var_o = dense_gp(X, Y, Xs, matern32(0.5, 1.0), 0.0625)
    np.testing.assert_allclose(mu, mu_o, atol=1e-6)
    np.testing.assert_allclose(var, var_o, atol=1e-6)


def test_dtc_with_all_points_equals_full():
    X, Y = stream(60)
    full = fit((X, Y), CFG, kind="full")
    dtc = fit((X, Y), CFG, kind="dtc", inducing=np.unique(X))
    mf, _ = predict(full, X)
    md, _ = predict(dtc, X)
    np.testing.assert_allclose(md, mf, atol=1e-6)


def test_scalar_and_vector_predictions_agree():
    X, Y = stream(120)
    for kind in ("full", "dtc"):
        model = fit((X, Y), CFG, kind=kind)
        grid = np.linspace(7, 9, 7)
        mu, var = predict(model, grid)
        for g, m, v in zip(grid, mu, var):
            ms, vs = predict(model, float(g))
            assert ms == pytest.approx(m, abs=1e-10)
            assert vs == pytest.approx(v, abs=1e-10)


def test_prior_reversion_far_from_data():
    X, Y = stream(200)
    for kind in ("full", "dtc"):
        model = fit((X, Y), CFG, kind=kind)
        mu, var = predict(model, np.array([50.0, -40.0]))
        np.testing.assert_allclose(mu, 0.0, atol=1e-9)
        np.testing.assert_allclose(var, CFG.signal_variance, atol=1e-9)
        _, v_mid = predict(model, 8.5)
        assert v_mid < predict(model, 9.0 + 3 * CFG.length_scale)[1]


def test_variance_bounds_and_observed_set():
    X, Y = stream(300)
    model = fit((X, Y), CFG, kind="dtc")
    grid = np.linspace(0, 20, 500)
    _, var = predict(model, grid)
    assert np.all(var >= 0) and np.all(var <= CFG.signal_variance + 1e-8)
    lo, hi = model.observed
    assert lo == X.min() and hi == X.max()
    assert np.all((model.inducing >= lo) & (model.inducing <= hi))
    assert model.in_observed(np.array([lo, hi, hi + 1])).tolist() == [True, True, False]


@settings(max_examples=25, deadline=None)
@given(st.floats(7.0, 9.0))
def test_adding_a_point_never_raises_variance_there(x_new):
    X, Y = stream(40)
    before = predict(fit((X, Y), CFG, kind="full"), x_new)[1]
    after = predict(fit((np.append(X, x_new), np.append(Y, 0.0)), CFG, kind="full"), x_new)[1]
    assert after <= before + 1e-10


def test_fit_preconditions():
    with pytest.raises(InsufficientDataError):
        fit(([1.0], [1.0]), CFG)
    with pytest.raises(ValueError):
        fit(([1.0, 2.0], [1.0]), CFG)
    with pytest.raises(ValueError):
        fit(([1.0, 2.0], [1.0, 2.0]), CFG, kind="fitc")
    with pytest.raises(ValueError):
        fit(([1.0, 2.0], [1.0, 2.0]), CFG, kind="dtc", n_inducing=3)


def test_duplicate_inputs_without_noise_use_jitter():
    cfg = KernelConfig(noise_variance=0.0)
    model = fit(([1.0, 1.0, 2.0], [0.5, 0.5, 1.0]), cfg, kind="full")
    assert model.jitter > 0
    assert np.isfinite(predict(model, 1.5)[0])


def test_dataset_window():
    ds = Dataset(capacity=3)
    for i in range(5):
        ds.append(i, 2 * i)
    X, Y = ds.arrays()
    assert X.tolist() == [2, 3, 4] and Y.tolist() == [4, 6, 8]
    assert len(ds) == 3


def test_model_dump():
    X, Y = stream(50)
    d = fit((X, Y), CFG, kind="dtc", n_inducing=10).to_dict()
    assert d["kind"] == "dtc" and len(d["inducing_points"]) <= 10
    assert d["kernel"]["length_scale"] == 0.5


def test_benchmark_rows():
    rows = benchmark_fit(sizes=(20, 40), repetitions=2)
    assert [r["M"] for r in rows] == [20, 40]
    assert all(r["full_median_s"] > 0 and r["dtc_median_s"] > 0 for r in rows)
    with pytest.raises(ValueError):
        benchmark_fit(sizes=(20000,), repetitions=1)


def test_tuning_does_not_lower_likelihood():
    X, Y = stream(80)
    start = KernelConfig(length_scale=2.0, noise_variance=0.5)
    tuned = tune_hyperparameters(X, Y, start)
    assert log_marginal_likelihood(X, Y, tuned) >= log_marginal_likelihood(X, Y, start)
