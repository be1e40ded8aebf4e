"""SVG plots drawn from the CSVs a run has already written."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import read_csv_table


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "constrained-enkf"
    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt

    plt.close(fig)
    return Path(path)


def plot_mean_spread(csv_path, svg_path, max_panels: int = 8):
    plt = _pyplot()
    header, rows = read_csv_table(csv_path)
    data = np.array(rows, dtype=float)
    x = data[:, header.index("time")] if "time" in header else data[:, 0]
    names = [h[5:] for h in header if h.startswith("mean_")][:max_panels]
    fig, axes = plt.subplots(len(names), 1, figsize=(7, 1.8 * len(names)), sharex=True,
                             squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        m = data[:, header.index(f"mean_{name}")]
        s = data[:, header.index(f"spread_{name}")]
        ax.plot(x, m, lw=1.2)
        ax.fill_between(x, m - s, m + s, alpha=0.3)
        ax.set_ylabel(name)
    axes[-1, 0].set_xlabel(header[1] if "time" in header else header[0])
    return _save(fig, svg_path)


def plot_violations(csv_path, svg_path):
    plt = _pyplot()
    header, rows = read_csv_table(csv_path)
    labels = [r[0] for r in rows]
    M = np.array([r[1:] for r in rows], dtype=float).reshape(len(rows), len(header) - 1)
    fig, ax = plt.subplots(figsize=(8, 0.35 * len(labels) + 1.5))
    im = ax.imshow(M, aspect="auto", interpolation="nearest", cmap="viridis", vmin=0, vmax=1,
                   extent=(0.5, M.shape[1] + 0.5, len(labels) - 0.5, -0.5))
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels(labels)
    ax.set_xlabel("step")
    fig.colorbar(im, ax=ax, label="fraction of members violating")
    return _save(fig, svg_path)


def plot_ensemble_evolution(csv_path, svg_path):
    plt = _pyplot()
    header, rows = read_csv_table(csv_path)
    params = list(dict.fromkeys(r[1] for r in rows))
    fig, axes = plt.subplots(len(params), 1, figsize=(7, 1.6 * len(params)), sharex=True,
                             squeeze=False)
    for ax, p in zip(axes[:, 0], params):
        sel = np.array([[float(x) for x in r[:1] + r[2:]] for r in rows if r[1] == p])
        it = sel[:, 0]
        col = {h: i - 1 for i, h in enumerate(header) if i >= 2}
        ax.fill_between(it, sel[:, col["min"]], sel[:, col["max"]], alpha=0.2)
        ax.fill_between(it, sel[:, col["q25"]], sel[:, col["q75"]], alpha=0.4)
        ax.plot(it, sel[:, col["median"]], lw=1.2)
        ax.set_ylabel(p)
    axes[-1, 0].set_xlabel("iteration")
    return _save(fig, svg_path)


def plot_profile(csv_path, svg_path):
    plt = _pyplot()
    header, rows = read_csv_table(csv_path)
    data = np.array(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(4, 5))
    for i, (name, style) in enumerate(zip(header[1:], ("--", "-", ":")), start=1):
        ax.plot(data[:, i], data[:, 0], style, marker="o", ms=3, label=name)
    ax.invert_yaxis()
    ax.set_xlabel("c_s [m/s]")
    ax.set_ylabel("z [m]")
    ax.legend()
    return _save(fig, svg_path)


PLOTTERS = {
    "mean_spread.csv": plot_mean_spread,
    "violations.csv": plot_violations,
    "ensemble_evolution.csv": plot_ensemble_evolution,
    "profile.csv": plot_profile,
}


def plot_outputs(out_dir) -> list[Path]:
    """Render every recognized CSV in ``out_dir`` to an SVG next to it."""
    out_dir = Path(out_dir)
    made = []
    for name, fn in PLOTTERS.items():
        src = out_dir / name
        if src.exists():
            made.append(fn(src, src.with_suffix(".svg")))
    return made
