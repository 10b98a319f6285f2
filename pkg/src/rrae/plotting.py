"""Figures for the CLI report path.  All output is SVG and byte-stable across runs."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "rrae", "svg.fonttype": "none", "figure.dpi": 100}


def _save(fig, path):
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def spectrum_figure(sv, path, tau=None, title="Normalized singular values"):
    """Linear and log-scale polylines of sigma_i / sigma_1 against i."""
    sv = np.asarray(sv, dtype=np.float64)
    idx = np.arange(1, sv.size + 1)
    with matplotlib.rc_context(_RC):
        fig, (lin, lg) = plt.subplots(1, 2, figsize=(9, 3.5))
        lin.plot(idx, sv, marker=".")
        lin.set_xlabel("index i")
        lin.set_ylabel("sigma_i / sigma_1")
        # exact zeros cannot go on a log axis; clamp them to the float floor
        lg.semilogy(idx, np.maximum(sv, np.finfo(float).tiny), marker=".")
        if tau is not None:
            lg.axhline(tau, color="gray", linestyle="--", linewidth=0.8)
        lg.set_xlabel("index i")
        fig.suptitle(title)
        fig.tight_layout()
    return _save(fig, path)


def minmax_rows(A):
    """Scale each row to [0, 1]; constant rows map to 0."""
    A = np.asarray(A, dtype=np.float64)
    lo = A.min(axis=1, keepdims=True)
    span = A.max(axis=1, keepdims=True) - lo
    return np.divide(A - lo, span, out=np.zeros_like(A), where=span > 0)


def coefficients_figure(params, A, path):
    """Normalized latent coefficients against the (first) parameter."""
    p = np.atleast_2d(np.asarray(params, dtype=np.float64))
    order = np.argsort(p[:, 0], kind="stable")
    An = minmax_rows(A)
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for i, row in enumerate(An):
            ax.plot(p[order, 0], row[order], marker="o", markersize=3, label=f"alpha_{i + 1}")
        ax.set_xlabel("parameter p1")
        ax.set_ylabel("normalized coefficient")
        if len(An) <= 12:
            ax.legend(fontsize=7)
        fig.tight_layout()
    return _save(fig, path)


def predictions_figure(t, X_true, X_pred, path, max_curves=4):
    """A few test curves: truth (solid) vs interpolated prediction (dashed)."""
    n = min(max_curves, X_true.shape[1])
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for d in range(n):
            line, = ax.plot(t, X_true[:, d], linewidth=1)
            ax.plot(t, X_pred[:, d], linestyle="--", color=line.get_color(), linewidth=1)
        ax.set_xlabel("t")
        fig.tight_layout()
    return _save(fig, path)


def report_figure(labels, train_err, test_err, path):
    """Grouped bars of train/test relative error per run."""
    x = np.arange(len(labels))
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels) + 2), 3.5))
        ax.bar(x - 0.2, train_err, 0.4, label="train")
        ax.bar(x + 0.2, test_err, 0.4, label="test")
        ax.set_xticks(x, labels, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel("relative error (%)")
        ax.legend()
        fig.tight_layout()
    return _save(fig, path)
