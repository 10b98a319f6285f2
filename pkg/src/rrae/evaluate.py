"""Latent-coefficient interpolation, decoding and evaluation metrics."""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import models
from .data import denormalize


class ExtrapolationError(ValueError):
    pass


class DistributionError(ValueError):
    pass


@dataclass
class CoefficientMap:
    """Training coefficients (k x D) keyed by their parameter points (D x dims)."""

    params: np.ndarray
    coeffs: np.ndarray
    mode: str = "linear_1d"
    _axes: list = field(default=None, repr=False)
    _grid: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.params = np.atleast_2d(np.asarray(self.params, dtype=np.float64))
        if self.params.shape[0] == 1 and self.params.shape[1] != 1 and self.mode == "linear_1d":
            self.params = self.params.T
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape[1] != self.params.shape[0]:
            raise ValueError(
                f"{self.coeffs.shape[1]} coefficient columns for {self.params.shape[0]} parameters")
        if self.mode == "linear_1d":
            p = self.params[:, 0]
            order = np.argsort(p, kind="stable")
            if np.any(np.diff(p[order]) <= 0):
                raise ValueError("1-D interpolation needs unique parameter values")
            self._axes = [p[order]]
            self._grid = self.coeffs[:, order]
        elif self.mode == "bilinear_2d":
            if self.params.shape[1] != 2:
                raise ValueError("bilinear interpolation needs 2-D parameters")
            ax0 = np.unique(self.params[:, 0])
            ax1 = np.unique(self.params[:, 1])
            if len(ax0) * len(ax1) != len(self.params) or len(ax0) < 2 or len(ax1) < 2:
                raise ValueError("bilinear interpolation needs a complete rectangular grid")
            grid = np.full((self.coeffs.shape[0], len(ax0), len(ax1)), np.nan)
            i = np.searchsorted(ax0, self.params[:, 0])
            j = np.searchsorted(ax1, self.params[:, 1])
            grid[:, i, j] = self.coeffs
            if np.isnan(grid).any():
                raise ValueError("bilinear interpolation needs a complete rectangular grid")
            self._axes = [ax0, ax1]
            self._grid = grid
        else:
            raise ValueError(f"unknown interpolation mode {self.mode!r}")


def _cell(axis, x):
    lo, hi = axis[0], axis[-1]
    if x < lo - 1e-12 * max(1.0, abs(lo)) or x > hi + 1e-12 * max(1.0, abs(hi)):
        raise ExtrapolationError(f"query {x} outside training range [{lo}, {hi}]")
    i = int(np.clip(np.searchsorted(axis, x, side="right") - 1, 0, len(axis) - 2))
    w = (x - axis[i]) / (axis[i + 1] - axis[i])
    return i, float(np.clip(w, 0.0, 1.0))


def interpolate_coeffs(cmap, p_query):
    """Coefficient vector (k,) at one parameter point; refuses to extrapolate."""
    p = np.atleast_1d(np.asarray(p_query, dtype=np.float64))
    if cmap.mode == "linear_1d":
        axis = cmap._axes[0]
        if len(axis) == 1:
            if not np.isclose(p[0], axis[0]):
                raise ExtrapolationError(f"query {p[0]} outside single training point {axis[0]}")
            return cmap._grid[:, 0].copy()
        i, w = _cell(axis, p[0])
        if w == 0.0:
            return cmap._grid[:, i].copy()
        if w == 1.0:
            return cmap._grid[:, i + 1].copy()
        return (1 - w) * cmap._grid[:, i] + w * cmap._grid[:, i + 1]
    i, u = _cell(cmap._axes[0], p[0])
    j, v = _cell(cmap._axes[1], p[1])
    g = cmap._grid
    return ((1 - u) * (1 - v) * g[:, i, j] + u * (1 - v) * g[:, i + 1, j]
            + (1 - u) * v * g[:, i, j + 1] + u * v * g[:, i + 1, j + 1])


def interpolate_many(cmap, points):
    return np.stack([interpolate_coeffs(cmap, p) for p in np.atleast_2d(points)], axis=1)


def coefficient_map(params, fac):
    params = np.atleast_2d(params)
    mode = "linear_1d" if params.shape[1] == 1 else "bilinear_2d"
    return CoefficientMap(params, fac.A, mode)


def decode_coeffs(state, U, alpha, norm=None):
    """Decode latent U @ alpha (alpha may hold several columns) and undo normalisation."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim == 1:
        alpha = alpha[:, None]
    if U.shape[1] != alpha.shape[0]:
        raise ValueError(f"basis has {U.shape[1]} vectors but {alpha.shape[0]} coefficients given")
    out = models.decode(state, U @ alpha).value
    return denormalize(out, norm) if norm is not None else out


def column_errors(X_true, X_pred):
    """Per-column relative L2 error in percent; zero-norm columns come back as NaN."""
    X_true = np.asarray(X_true, dtype=np.float64)
    X_pred = np.asarray(X_pred, dtype=np.float64)
    if X_true.shape != X_pred.shape:
        raise ValueError(f"shape mismatch {X_true.shape} vs {X_pred.shape}")
    num = np.linalg.norm(X_true - X_pred, axis=0)
    den = np.linalg.norm(X_true, axis=0)
    err = np.full(den.shape, np.nan)
    ok = den > 0
    err[ok] = num[ok] / den[ok] * 100
    return err


def relative_error(X_true, X_pred, mode="columns"):
    """Mean per-column relative error in percent (``mode='global'``: one Frobenius ratio)."""
    if mode == "global":
        X_true = np.asarray(X_true, dtype=np.float64)
        return float(np.linalg.norm(X_true - X_pred) / np.linalg.norm(X_true) * 100)
    err = column_errors(X_true, X_pred)
    bad = np.isnan(err)
    if bad.all():
        raise ValueError("every reference column has zero norm")
    if bad.any():
        warnings.warn(f"{int(bad.sum())} zero-norm reference column(s) excluded from the error",
                      RuntimeWarning, stacklevel=2)
    return float(np.mean(err[~bad]))


def spectrum(Y):
    """Singular values of Y divided by the largest one."""
    s = np.linalg.svd(np.asarray(Y, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros_like(s)
    return s / s[0]


def numerical_rank(Y, tau=1e-6):
    s = np.linalg.svd(np.asarray(Y, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tau * s[0]))


def entropy(P, atol=1e-6):
    """Mean Shannon entropy (nats) of the rows of a probability matrix."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.size == 0:
        raise DistributionError("expected a non-empty N x C probability matrix")
    if np.any(P < 0) or not np.all(np.isfinite(P)):
        raise DistributionError("probabilities must be finite and non-negative")
    if np.any(np.abs(P.sum(axis=1) - 1) > atol):
        raise DistributionError("every row must sum to 1")
    logs = np.log(np.where(P > 0, P, 1.0))
    return float(-np.sum(P * logs) / P.shape[0]) + 0.0  # avoid -0.0


def interpolation_weights(steps):
    """(weight on first, weight on second) for each interior interpolant."""
    j = np.arange(1, steps + 1)
    return 1 - j / (steps + 1), j / (steps + 1)


def interpolation_set(state, fac, norm, pairs, steps=5, seed=0):
    """Decode ``steps`` equidistant blends between random pairs of training samples.

    Returns (generated columns (T x pairs*steps), the (a, b) pair indices).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    D = fac.A.shape[1]
    rng = np.random.Generator(np.random.Philox(seed))
    chosen = np.array([rng.permutation(D)[:2] for _ in range(pairs)]) if D >= 2 \
        else np.zeros((pairs, 2), dtype=int)
    wa, wb = interpolation_weights(steps)
    alphas = []
    for a, b in chosen:
        alphas.append(fac.A[:, [a]] * wa + fac.A[:, [b]] * wb)
    alpha = np.concatenate(alphas, axis=1) if alphas else np.zeros((fac.A.shape[0], 0))
    return decode_coeffs(state, fac.U, alpha, norm), chosen


@dataclass
class EvalReport:
    """Per-sample errors plus spectrum/rank diagnostics of one trained model.

    ``metric`` picks the headline number: ``"global"`` is one Frobenius ratio
    over the whole split, ``"columns"`` the mean of per-sample errors.
    """

    train_errors: np.ndarray
    test_errors: np.ndarray
    spectrum: np.ndarray
    rank: int
    residual: float
    train_global: float = float("nan")
    test_global: float = float("nan")
    latent_rank: int | None = None
    decoder_input_rank: int | None = None
    metric: str = "global"
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric not in ("global", "columns"):
            raise ValueError(f"unknown error metric {self.metric!r}")

    @property
    def train_columns(self):
        return float(np.nanmean(self.train_errors))

    @property
    def test_columns(self):
        return float(np.nanmean(self.test_errors))

    @property
    def train_error(self):
        return self.train_global if self.metric == "global" else self.train_columns

    @property
    def test_error(self):
        return self.test_global if self.metric == "global" else self.test_columns

    def summary(self):
        out = {
            "train_error": self.train_error,
            "test_error": self.test_error,
            "train_error_global": self.train_global,
            "test_error_global": self.test_global,
            "train_error_columns": self.train_columns,
            "test_error_columns": self.test_columns,
            "rank": self.rank,
            "latent_rank": self.latent_rank,
            "decoder_input_rank": self.decoder_input_rank,
            "factorization_residual": self.residual,
        }
        out.update(self.timings)
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["split", "index", "value"])
            for split, errs in (("train", self.train_errors), ("test", self.test_errors)):
                for i, e in enumerate(errs):
                    w.writerow([split, i, repr(float(e))])
            w.writerow(["metric", "", self.metric])
            for k, v in self.summary().items():
                if v is not None:
                    w.writerow([k, "", repr(v) if isinstance(v, float) else v])


def read_summary(path):
    """The summary rows of an eval CSV as a dict (numbers parsed)."""
    out = {}
    with open(path, newline="") as fh:
        for split, index, value in list(csv.reader(fh))[1:]:
            if index == "" and split != "metric":
                out[split] = float(value)
            elif split == "metric":
                out[split] = value
    return out


def predict(state, fac, dataset, points):
    cmap = coefficient_map(dataset.params.train, fac)
    return decode_coeffs(state, fac.U, interpolate_many(cmap, points), dataset.norm)


def evaluate(state, fac, dataset, tau=1e-6, metric="global"):
    """Train reconstruction from the factorization and interpolated test predictions."""
    train_pred = decode_coeffs(state, fac.U, fac.A, dataset.norm)
    test_pred = predict(state, fac, dataset, dataset.params.test)
    Y = models.encode(state, dataset.Xn).value
    Z = models.decoder_input(state, Y)
    Z = getattr(Z, "value", Z)
    return EvalReport(
        column_errors(dataset.X, train_pred),
        column_errors(dataset.X_test, test_pred),
        spectrum(fac.U @ fac.A),
        numerical_rank(fac.U @ fac.A, tau),
        fac.residual,
        relative_error(dataset.X, train_pred, "global"),
        relative_error(dataset.X_test, test_pred, "global"),
        numerical_rank(Y, tau),
        numerical_rank(Z, tau),
        metric,
    )
