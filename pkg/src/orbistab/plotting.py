"""Quick-look SVG figures (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp so reruns write identical files
matplotlib.rcParams["svg.hashsalt"] = "orbistab"
matplotlib.rcParams.update({
    "figure.figsize": (7.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "lines.linewidth": 1.2,
})


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def _shade_windows(ax, x, mask, **kw):
    """Shade the x-ranges where ``mask`` holds."""
    if not np.any(mask):
        return
    edges = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(int), [0]])))
    for a, b in zip(edges[::2], edges[1::2]):
        ax.axvspan(x[a], x[b - 1], color="0.85", lw=0, **kw)


def plot_orbit(orbit, path):
    """Passive phase portrait and the constraint curve traced by the orbit."""
    fig, (a0, a1) = plt.subplots(1, 2)
    t = np.linspace(0.0, orbit.T, 1000)
    x = orbit.state_at(t)
    a0.plot(x[:, 1], x[:, 3], "k")
    a0.set_xlabel(r"$\varphi$")
    a0.set_ylabel(r"$\dot\varphi$")
    a1.plot(x[:, 1], x[:, 0], "k")
    a1.set_xlabel(r"$\varphi$")
    a1.set_ylabel(r"$\vartheta$")
    fig.suptitle(f"orbit, T = {orbit.T:.4f} s")
    return _save(fig, path)


def plot_normal(sub, path, n=1024):
    """Components of the normal ``n(tau)`` and the input projection ``b(tau)``."""
    tau = sub.tau[0] + np.linspace(0.0, sub.T_tau, n + 1)
    nv = np.array([sub.n_at(t) for t in tau])
    b = np.array([sub.b_at(t) for t in tau])
    fig, (a0, a1) = plt.subplots(2, 1, sharex=True)
    for k in range(3):
        a0.plot(tau, nv[:, k], label=f"$n_{k + 1}$")
    a0.legend(loc="upper right")
    a1.plot(tau, b, "k")
    for z, _ in sub.zeros:
        a1.axvline(z, color="r", ls="--", lw=0.8)
    a1.set_ylabel("b")
    a1.set_xlabel(r"$\tau$")
    return _save(fig, path)


def plot_transverse(trace, path, max_abs_b=None, frac=0.05):
    """``xi`` and ``s`` against ``tau`` with the low-``|b|`` windows shaded."""
    fig, (a0, a1) = plt.subplots(2, 1, sharex=True)
    tau = trace.tau
    if max_abs_b is not None:
        mask = np.abs(trace.b) < frac * max_abs_b
        _shade_windows(a0, tau, mask)
        _shade_windows(a1, tau, mask)
    for k in range(3):
        a0.plot(tau, trace.xi[:, k], label=rf"$\xi_{k + 1}$")
    a0.legend(loc="upper right")
    a1.plot(tau, trace.s, "k")
    a1.set_ylabel("s")
    a1.set_xlabel(r"$\tau$")
    return _save(fig, path)


def plot_distance(trace, path, alpha=None):
    """Orbital distance and the output Lyapunov function ``V_y`` against time."""
    fig, ax = plt.subplots()
    od = trace.metrics_series["orbital_dist"]
    vy = trace.metrics_series["V_y"]
    ax.semilogy(trace.t, np.maximum(od, 1e-16), label="orbital distance")
    ax.semilogy(trace.t, np.maximum(vy, 1e-16), label=r"$V_y$")
    if alpha is not None and vy[0] > 0:
        ax.semilogy(trace.t, vy[0] * np.exp(-alpha * trace.t), "k--", lw=0.8, label=r"$V_y(0)e^{-\alpha t}$")
    ax.set_xlabel("t [s]")
    ax.legend(loc="upper right")
    return _save(fig, path)
