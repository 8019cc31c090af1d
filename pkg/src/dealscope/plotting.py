"""Figures rendered from report data.

Kept apart from the computational modules: matplotlib is imported lazily,
with the non-interactive Agg backend, only when a figure is requested.
PNGs are written without the software tag so reruns are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_PNG_META = {"Software": None}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "dealscope"
    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    fig.clf()
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path


def importance_bar(ranking, path, top: int = 15) -> Path:
    plt = _pyplot()
    shown = ranking[:top][::-1]
    fig, ax = plt.subplots(figsize=(6.5, 0.32 * len(shown) + 1.2))
    ax.barh([r.feature for r in shown], [r.mean_abs_phi for r in shown], color="#3b6ea5")
    ax.set_xlabel("mean |SHAP value| (log-odds)")
    ax.set_title("Global feature importance")
    fig.tight_layout()
    return _save(fig, path)


def dependence_scatter(values, phi, feature: str, path, partner_values=None,
                       partner: str | None = None) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    if partner_values is not None:
        pts = ax.scatter(values, phi, c=partner_values, s=8, cmap="coolwarm")
        fig.colorbar(pts, ax=ax, label=partner or "partner")
    else:
        ax.scatter(values, phi, s=8, color="#3b6ea5")
    ax.axhline(0.0, color="grey", lw=0.6)
    ax.set_xlabel(feature)
    ax.set_ylabel(f"SHAP value of {feature}")
    fig.tight_layout()
    return _save(fig, path)


def f1_heatmap(grid, path, features: str = "all", split: str = "holdout") -> Path:
    """Model by sampler hold-out F1 for one feature set."""
    plt = _pyplot()
    models = list(dict.fromkeys(c.model for c in grid.cells))
    samplers = list(dict.fromkeys(c.sampler for c in grid.cells))
    table = np.full((len(models), len(samplers)), np.nan)
    for c in grid.cells:
        if c.features == features and c.status == "ok" and split in c.rows:
            table[models.index(c.model), samplers.index(c.sampler)] = c.rows[split].f1
    fig, ax = plt.subplots(figsize=(1.6 * len(samplers) + 2, 0.5 * len(models) + 1.5))
    im = ax.imshow(table, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(samplers)), samplers)
    ax.set_yticks(range(len(models)), models)
    for i in range(len(models)):
        for j in range(len(samplers)):
            if np.isfinite(table[i, j]):
                ax.text(j, i, f"{table[i, j]:.3f}", ha="center", va="center", color="white")
    fig.colorbar(im, ax=ax, label=f"{split} F1")
    ax.set_title(f"F1 by model and sampler ({features} features)")
    fig.tight_layout()
    return _save(fig, path)
