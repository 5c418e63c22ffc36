"""Report figures rendered alongside the delimited outputs.

Everything here writes PNG files with matplotlib's Agg backend; no display
is ever opened. Figures are deterministic for identical inputs (no
timestamps or machine-specific text are drawn).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["save_loss_curves", "save_heatmap_png", "save_metrics_bars"]

_SAVE_OPTS = {"dpi": 150, "metadata": {"Software": None}}


def save_loss_curves(loss_history, path) -> None:
    """Fig.-3-style panel: loss terms and mean parameter values vs iteration."""
    iters = [r.iteration for r in loss_history]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    term_ax, total_ax, flow_ax, vol_ax = axes.ravel()

    for label, key in (("L_C", "l_conc"), ("L_r", "l_res"),
                       ("L_b", "l_init"), ("L_reg", "l_reg")):
        term_ax.plot(iters, [getattr(r, key) for r in loss_history], label=label)
    term_ax.set_yscale("log")
    term_ax.set_ylabel("loss term")
    term_ax.legend(fontsize=8)

    total_ax.plot(iters, [r.total for r in loss_history], color="k")
    total_ax.set_yscale("log")
    total_ax.set_ylabel("total loss")

    flow_ax.plot(iters, [r.mean_fp for r in loss_history], label="Fp")
    flow_ax.plot(iters, [r.mean_ps for r in loss_history], label="PS")
    flow_ax.set_ylabel("mL/min/mL")
    flow_ax.set_xlabel("iteration")
    flow_ax.legend(fontsize=8)

    vol_ax.plot(iters, [r.mean_vp for r in loss_history], label="vp")
    vol_ax.plot(iters, [r.mean_ve for r in loss_history], label="ve")
    vol_ax.set_ylabel("fraction")
    vol_ax.set_xlabel("iteration")
    vol_ax.legend(fontsize=8)

    for ax in axes.ravel():
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_heatmap_png(map2d: np.ndarray, path, value_range=None,
                     label: str = "") -> None:
    """Color heatmap of one parameter slice with a colorbar."""
    arr = np.asarray(map2d, dtype=float)
    lo, hi = value_range if value_range is not None else (arr.min(), arr.max())
    if hi <= lo:
        hi = lo + 1.0
    fig, ax = plt.subplots(figsize=(6, max(2.0, 6.0 * arr.shape[1] / max(arr.shape[0], 1))))
    im = ax.imshow(arr.T, origin="lower", vmin=lo, vmax=hi, cmap="viridis",
                   interpolation="nearest", aspect="equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if label:
        ax.set_title(label)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_metrics_bars(rows, path) -> None:
    """Grouped bars of NMSE per parameter for each method row set.

    rows: (method, param, nmse, ssim) tuples as written to the metrics CSV.
    """
    methods = []
    per_method = {}
    for method, param, nm, _ in rows:
        per_method.setdefault(method, {})[param] = nm
        if method not in methods:
            methods.append(method)
    params = ["all", "Fp", "vp", "ve", "PS"]
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    xs = np.arange(len(params))
    for i, method in enumerate(methods):
        vals = [per_method[method].get(p, np.nan) for p in params]
        ax.bar(xs + i * width, vals, width=width, label=method)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(params)
    ax.set_ylabel("NMSE")
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)
