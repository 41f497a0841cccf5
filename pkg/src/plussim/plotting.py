"""Figure rendering for the report commands (non-interactive Agg backend)."""

import math

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_tracking(traj, profile, metrics, path, h_ref=None):
    plt = _plt()
    h_ref = profile.tower_height if h_ref is None else h_ref
    x = metrics.x
    alt = h_ref + traj.states[: x.size, 4]
    fig, (ax1, ax2, ax3) = plt.subplots(3, 1, figsize=(8, 7.5), sharex=True)
    ax1.plot(x, profile.wire_height(x), "k-", lw=1.2, label="wire")
    ax1.plot(x, alt, "C0-", lw=1.0, label="aircraft")
    for xt in profile.tower_positions:
        ax1.axvline(xt, color="0.7", lw=0.6, ls=":")
    ax1.set_ylabel("height [m]")
    ax1.legend(loc="lower right", fontsize=8)
    ax2.plot(x, metrics.clearance, "C1-", lw=1.0)
    ax2.axhspan(-metrics.threshold, metrics.threshold, color="C2", alpha=0.15)
    ax2.set_ylabel("clearance [m]")
    ax2.set_title(f"{metrics.length_under:.1f} m of {metrics.length_total:.1f} m within "
                  f"{metrics.threshold:g} m ({100 * metrics.fraction_under:.0f}%)", fontsize=9)
    ax3.step(traj.x[: x.size], traj.sigma_cmd[: x.size], "C3-", where="post", lw=0.8, label="command")
    ax3.plot(traj.x[: x.size], traj.sigma_achieved[: x.size], "C4-", lw=0.8, label="achieved")
    ax3.set_ylabel("sigma")
    ax3.set_xlabel("along-track x [m]")
    ax3.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_velocity(traj, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(traj.t, traj.component("u"), "C0-", lw=1.0)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("u [m/s]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sysid(record, fits, predictions, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(record.t, record.output, "k.", ms=1.5, label="record")
    for i, (rep, y_hat) in enumerate(zip(fits, predictions)):
        ax.plot(record.t, y_hat, f"C{i}-", lw=1.0, label=f"{rep.structure} ({rep.accuracy:.1f}%)")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("output")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_wavelength_map(rows, path):
    plt = _plt()
    rows = np.asarray(rows, dtype=float)
    sigmas = np.unique(rows[:, 2])
    fig, axes = plt.subplots(1, sigmas.size, figsize=(3.2 * sigmas.size, 3), squeeze=False)
    bs, cs = np.unique(rows[:, 0]), np.unique(rows[:, 1])
    vmin, vmax = rows[:, 3].min(), rows[:, 3].max()
    for ax, s in zip(axes[0], sigmas):
        grid = np.full((cs.size, bs.size), math.nan)
        for b, c, ss, lam in rows[rows[:, 2] == s]:
            grid[np.searchsorted(cs, c), np.searchsorted(bs, b)] = lam
        im = ax.imshow(grid, origin="lower", aspect="auto", vmin=vmin, vmax=vmax,
                       extent=(bs[0], bs[-1], cs[0], cs[-1]) if bs.size > 1 and cs.size > 1 else None)
        ax.set_title(f"sigma = {s:+.2f}", fontsize=9)
        ax.set_xlabel("wingspan [m]")
    axes[0][0].set_ylabel("chord [m]")
    fig.colorbar(im, ax=axes[0].tolist(), label="Phugoid wavelength [m]")
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_trends(tables, path):
    plt = _plt()
    fig, axes = plt.subplots(1, len(tables), figsize=(3.2 * len(tables), 3), squeeze=False, sharey=True)
    for ax, (L, tab) in zip(axes[0], sorted(tables.items())):
        for b, c, area, vals in tab.rows:
            ax.plot(list(tab.sag_pcts), [vals.get(p, math.nan) for p in tab.sag_pcts], ".-", lw=0.8,
                    label=f"b={b:g}, c={c:g}")
        ax.set_title(f"pylon span {L:g} m", fontsize=9)
        ax.set_xlabel("sag [%]")
    axes[0][0].set_ylabel("max |dCL_m|")
    axes[0][-1].legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
