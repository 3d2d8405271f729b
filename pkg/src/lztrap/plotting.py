"""Figures written next to the CSV outputs of the report commands."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def scan_figure(scan, path, title=None):
    """Line plot (N=1) or filled contour map (N=2) of a landscape scan."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        if len(scan.axes) == 1:
            ax.plot(scan.axes[0], scan.values, lw=1.5, label="propagator")
            if scan.closed_form is not None:
                ax.plot(scan.axes[0], scan.closed_form, "--", lw=1, label="closed form")
                ax.legend(frameon=False)
            ax.set_xlabel("$a_1$")
            ax.set_ylabel("$J$")
        else:
            a1, a2 = scan.axes
            if a1.size < 2 or a2.size < 2:
                plt.close(fig)
                return scan_figure_slice(scan, path, title)
            cs = ax.contourf(a1, a2, scan.values.T, levels=40, cmap="viridis")
            fig.colorbar(cs, ax=ax, label="$J$")
            ax.set_xlabel("$a_1$")
            ax.set_ylabel("$a_2$")
        if title:
            ax.set_title(title)
        _save(fig, path)


def scan_figure_slice(scan, path, title=None):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        a1, a2 = scan.axes
        if a1.size >= a2.size:
            ax.plot(a1, scan.values[:, 0])
            ax.set_xlabel(f"$a_1$ ($a_2$={a2[0]:g})")
        else:
            ax.plot(a2, scan.values[0, :])
            ax.set_xlabel(f"$a_2$ ($a_1$={a1[0]:g})")
        ax.set_ylabel("$J$")
        if title:
            ax.set_title(title)
        _save(fig, path)


def trap_figure(stats, path, title=None):
    """Trapping probability against N with binomial error bars."""
    n = np.array([s.N for s in stats])
    p = np.array([s.probability for s in stats])
    e = np.array([s.stderr for s in stats])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(n, p, yerr=e, fmt="o-", ms=4, capsize=2)
        ax.set_xlabel("$N$")
        ax.set_ylabel("trapping probability")
        ax.set_ylim(-0.02, 1.02)
        if title:
            ax.set_title(title)
        _save(fig, path)


def noise_figure(reports, path, title=None):
    """Predicted vs Monte Carlo decrease against sigma, one series per noise kind."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        kinds = sorted({r.kind.value for r in reports})
        for kind in kinds:
            rs = sorted((r for r in reports if r.kind.value == kind), key=lambda r: r.sigma)
            s = np.array([r.sigma for r in rs])
            ax.plot(s, [r.predicted for r in rs], "-", label=f"{kind}: second order")
            ax.plot(s, [r.bound for r in rs], ":", label=f"{kind}: bound")
            ax.errorbar(
                s, [r.mc_decrease for r in rs], yerr=[r.mc_stderr for r in rs],
                fmt="o", ms=4, capsize=2, label=f"{kind}: Monte Carlo",
            )
        ax.set_xlabel(r"$\sigma$")
        ax.set_ylabel("decrease of mean $J$")
        ax.legend(frameon=False, fontsize=8)
        if title:
            ax.set_title(title)
        _save(fig, path)
