import math
import warnings

import numpy as np
import pytest

from rrae import data, evaluate, models


def cmap_1d():
    p = np.array([[0.0], [1.0], [2.0], [4.0]])
    A = np.array([[1.0, 3.0, 2.0, 6.0], [0.0, -1.0, 5.0, 1.0]])
    return evaluate.CoefficientMap(p, A, "linear_1d")


def cmap_2d():
    a0, a1 = np.array([0.0, 1.0, 3.0]), np.array([10.0, 12.0])
    P = np.array([[x, y] for x in a0 for y in a1])
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, len(P)))
    return evaluate.CoefficientMap(P, A, "bilinear_2d"), P, A


def test_1d_knots_reproduced():
    cm = cmap_1d()
    for j, p in enumerate([0.0, 1.0, 2.0, 4.0]):
        assert np.array_equal(evaluate.interpolate_coeffs(cm, p), cm.coeffs[:, j])


def test_1d_midpoint_is_mean():
    cm = cmap_1d()
    assert np.allclose(evaluate.interpolate_coeffs(cm, 3.0), (cm.coeffs[:, 2] + cm.coeffs[:, 3]) / 2)


def test_1d_unsorted_input_is_sorted():
    cm = evaluate.CoefficientMap(np.array([[2.0], [0.0]]), np.array([[4.0, 0.0]]))
    assert evaluate.interpolate_coeffs(cm, 0.5)[0] == pytest.approx(1.0)


def test_1d_duplicate_params_rejected():
    with pytest.raises(ValueError):
        evaluate.CoefficientMap(np.array([[1.0], [1.0]]), np.ones((1, 2)))


@pytest.mark.parametrize("q", [-0.1, 4.5])
def test_extrapolation_refused(q):
    with pytest.raises(evaluate.ExtrapolationError):
        evaluate.interpolate_coeffs(cmap_1d(), q)


def test_2d_cell_centre_is_corner_average():
    cm, P, A = cmap_2d()
    corners = [i for i, (x, y) in enumerate(P) if x in (1.0, 3.0)]
    got = evaluate.interpolate_coeffs(cm, [2.0, 11.0])
    assert np.allclose(got, A[:, corners].mean(axis=1), atol=1e-14)


def test_2d_knots_reproduced():
    cm, P, A = cmap_2d()
    for j, p in enumerate(P):
        assert np.allclose(evaluate.interpolate_coeffs(cm, p), A[:, j], atol=0)


def test_2d_incomplete_grid_rejected():
    P = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        evaluate.CoefficientMap(P, np.ones((1, 3)), "bilinear_2d")


def test_2d_extrapolation_refused():
    cm, _, _ = cmap_2d()
    with pytest.raises(evaluate.ExtrapolationError):
        evaluate.interpolate_coeffs(cm, [0.5, 13.0])


# --- decoding ----------------------------------------------------------------

def tiny_model():
    ds = data.make_dataset(data.DataConfig("shift", T=20, train_counts=(5,), test_count=6))
    spec = models.ModelSpec("rrae_strong", 20, 6, k_max=1, width=8, decoder_depth=2)
    st = models.init_state(spec, 0)
    Y = models.encode(st, ds.Xn).value
    return ds, st, models.factorize_latent(st, Y)


def test_decode_column_matches_model_output():
    ds, st, fac = tiny_model()
    own = models.decode(st, fac.U @ fac.A).value
    for d in range(3):
        got = evaluate.decode_coeffs(st, fac.U, fac.A[:, d])
        assert np.max(np.abs(got[:, 0] - own[:, d])) <= 1e-10


def test_decode_zero_coefficients_well_defined():
    ds, st, fac = tiny_model()
    out = evaluate.decode_coeffs(st, fac.U, np.zeros(1), ds.norm)
    assert out.shape == (20, 1) and np.all(np.isfinite(out))


def test_decode_shape_mismatch():
    ds, st, fac = tiny_model()
    with pytest.raises(ValueError):
        evaluate.decode_coeffs(st, fac.U, np.zeros(2))


# --- metrics -----------------------------------------------------------------

def test_relative_error_cases():
    X = np.random.default_rng(1).normal(size=(7, 4))
    assert evaluate.relative_error(X, X) == 0.0
    assert evaluate.relative_error(X, 2 * X) == pytest.approx(100.0, abs=1e-12)
    assert evaluate.relative_error(X, 2 * X, "global") == pytest.approx(100.0, abs=1e-12)


def test_relative_error_scalar_oracle():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    per = []
    for d in range(3):
        num = math.sqrt(sum((X[i, d] - Y[i, d]) ** 2 for i in range(5)))
        den = math.sqrt(sum(X[i, d] ** 2 for i in range(5)))
        per.append(num / den * 100)
    assert abs(evaluate.relative_error(X, Y) - sum(per) / 3) <= 1e-12


def test_relative_error_zero_column_excluded():
    X = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.warns(RuntimeWarning):
        e = evaluate.relative_error(X, X * 1.5)
    assert e == pytest.approx(50.0)


def test_relative_error_scale_consistent():
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
    assert evaluate.relative_error(-3 * X, -3 * Y) == pytest.approx(evaluate.relative_error(X, Y), rel=1e-12)


def test_rank_examples():
    assert evaluate.numerical_rank(np.diag([1.0, 0.5, 1e-9]), 1e-6) == 2
    assert evaluate.numerical_rank(np.zeros((3, 3))) == 0
    assert np.allclose(evaluate.spectrum(np.eye(5)), 1.0)
    assert evaluate.numerical_rank(np.eye(5)) == 5


def test_entropy_values():
    assert evaluate.entropy(np.eye(4)) == 0.0
    assert abs(evaluate.entropy(np.full((3, 10), 0.1)) - math.log(10)) <= 1e-12
    P = np.array([[0.5, 0.5, 0.0], [0.2, 0.3, 0.5]])
    ref = (-(0.5 * math.log(0.5)) * 2 - (0.2 * math.log(0.2) + 0.3 * math.log(0.3) + 0.5 * math.log(0.5))) / 2
    assert abs(evaluate.entropy(P) - ref) <= 1e-12


@pytest.mark.parametrize("P", [np.array([[0.5, 0.6]]), np.array([[-0.1, 1.1]]), np.ones((0, 3))])
def test_entropy_rejects_invalid(P):
    with pytest.raises(evaluate.DistributionError):
        evaluate.entropy(P)


def test_interpolation_weights():
    wa, wb = evaluate.interpolation_weights(5)
    assert wa[1] == pytest.approx(4 / 6) and wb[0] == pytest.approx(1 / 6)
    assert wa[0] == pytest.approx(5 / 6)
    assert np.allclose(wa + wb, 1.0)


def test_interpolation_set_counts_and_degenerate_pair():
    ds, st, fac = tiny_model()
    cols, pairs = evaluate.interpolation_set(st, fac, ds.norm, pairs=3, steps=5, seed=0)
    assert cols.shape == (20, 15) and pairs.shape == (3, 2)
    same = models.LatentFactorization(fac.U, np.repeat(fac.A[:, :1], 2, axis=1), None, "x", 0.0)
    cols, _ = evaluate.interpolation_set(st, same, ds.norm, pairs=1, steps=4)
    assert np.allclose(cols, cols[:, :1], atol=1e-12)


def test_interpolation_set_second_interpolant():
    ds, st, fac = tiny_model()
    cols, pairs = evaluate.interpolation_set(st, fac, None, pairs=1, steps=5, seed=1)
    a, b = pairs[0]
    alpha = 5 / 6 * fac.A[:, a] + 1 / 6 * fac.A[:, b]
    assert np.allclose(cols[:, 0], evaluate.decode_coeffs(st, fac.U, alpha)[:, 0], atol=1e-12)


def test_evaluate_report(tmp_path):
    ds, st, fac = tiny_model()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = evaluate.evaluate(st, fac, ds)
    assert rep.rank == 1 and rep.decoder_input_rank == 1
    assert np.all(rep.test_errors >= 0) and len(rep.test_errors) == 6
    assert rep.train_error == rep.train_global
    rep.to_csv(tmp_path / "e.csv")
    summ = evaluate.read_summary(tmp_path / "e.csv")
    assert summ["test_error"] == rep.test_error and summ["metric"] == "global"
    cols = evaluate.EvalReport(rep.train_errors, rep.test_errors, rep.spectrum, 1, 0.0, metric="columns")
    assert cols.test_error == pytest.approx(np.nanmean(rep.test_errors))
    with pytest.raises(ValueError):
        evaluate.EvalReport(rep.train_errors, rep.test_errors, rep.spectrum, 1, 0.0, metric="median")
