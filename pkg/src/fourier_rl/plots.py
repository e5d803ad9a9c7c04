"""SVG rendering of run CSVs. matplotlib is imported lazily and is optional."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .runner import read_csv


def _plt():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("plotting needs matplotlib (pip install matplotlib)") from exc
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "fourier-rl"  # stable element ids
    import matplotlib.pyplot as plt

    return plt


def _col(rows, key, cast=float):
    return np.array([cast(r[key]) for r in rows])


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def plot_train_log(csv_path, out):
    plt = _plt()
    rows = read_csv(csv_path)
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.plot(_col(rows, "step"), _col(rows, "return"))
    a.set_xlabel("step")
    a.set_ylabel("episode return")
    b.plot(_col(rows, "step"), _col(rows, "beta_hat"))
    b.set_xlabel("step")
    b.set_ylabel("beta_hat")
    b.set_yscale("log")
    _save(fig, out)
    plt.close(fig)


def plot_eval_noise(csv_path, out):
    plt = _plt()
    rows = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for level in dict.fromkeys(r["sigma_level"] for r in rows):
        sel = [r for r in rows if r["sigma_level"] == level]
        ax.errorbar(_col(sel, "step"), _col(sel, "mean_return"), _col(sel, "std_return"), label=level, capsize=2)
    ax.set_xlabel("step")
    ax.set_ylabel("eval return")
    ax.legend()
    _save(fig, out)
    plt.close(fig)


def plot_histogram(csv_path, out):
    plt = _plt()
    rows = read_csv(csv_path)
    lo, hi, n = _col(rows, "bin_left"), _col(rows, "bin_right"), _col(rows, "count")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(lo, n, width=hi - lo, align="edge")
    ax.set_xlabel("cycles over batch")
    ax.set_ylabel("neurons")
    _save(fig, out)
    plt.close(fig)


def plot_beta_sweep(csv_path, out):
    plt = _plt()
    rows = read_csv(csv_path)
    b0 = _col(rows, "beta_init")
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.errorbar(b0, _col(rows, "beta_final_mean"), _col(rows, "beta_final_std"), marker="o", capsize=2)
    a.plot(b0, b0, "k--", lw=0.8)
    a.set_xscale("log")
    a.set_yscale("log")
    a.set_xlabel("initial beta")
    a.set_ylabel("final beta_hat")
    b.errorbar(b0, _col(rows, "return_mean"), _col(rows, "return_std"), marker="o", capsize=2)
    b.set_xscale("log")
    b.set_xlabel("initial beta")
    b.set_ylabel("return")
    _save(fig, out)
    plt.close(fig)


def plot_fit_curve(csv_path, out):
    plt = _plt()
    rows = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for arch in dict.fromkeys(r["arch"] for r in rows):
        sel = [r for r in rows if r["arch"] == arch]
        ax.plot(_col(sel, "step"), _col(sel, "train_mse"), label=f"{arch} train")
        ax.plot(_col(sel, "step"), _col(sel, "test_mse"), "--", label=f"{arch} test")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("MSE")
    ax.legend()
    _save(fig, out)
    plt.close(fig)


def plot_surface(csv_path, out):
    plt = _plt()
    rows = read_csv(csv_path)
    x, v, z = _col(rows, "x"), _col(rows, "v"), _col(rows, "value")
    nx, nv = len(np.unique(x)), len(np.unique(v))
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    im = ax.imshow(z.reshape(nx, nv).T, origin="lower", aspect="auto",
                   extent=(x.min(), x.max(), v.min(), v.max()))
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("position")
    ax.set_ylabel("velocity")
    _save(fig, out)
    plt.close(fig)


RENDERERS = {
    "train_log.csv": plot_train_log,
    "eval_noise.csv": plot_eval_noise,
    "beta_sweep.csv": plot_beta_sweep,
    "fit_curve.csv": plot_fit_curve,
}


def render_dir(run_dir: Path) -> list[Path]:
    """Render every recognised CSV under ``run_dir`` to an SVG next to it."""
    made = []
    for csv_path in sorted(Path(run_dir).rglob("*.csv")):
        name = csv_path.name
        fn = RENDERERS.get(name)
        if fn is None and name.startswith("freq_hist_"):
            fn = plot_histogram
        elif fn is None and (name.startswith("surface_") or name == "dp_values.csv"):
            fn = plot_surface
        if fn is None:
            continue
        out = csv_path.with_suffix(".svg")
        fn(csv_path, out)
        made.append(out)
    if not made:
        raise RuntimeError(f"no plottable CSVs under {run_dir}")
    return made
