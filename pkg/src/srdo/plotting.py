"""Error-curve figures written next to the CSV output (opt-in via ``--plot``)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 3.2),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "savefig.dpi": 120,
}


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata so repeated runs write identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_seeds(traces: dict, path: str) -> str:
    """AE and CE against iteration, one faint line per seed plus the median."""
    with plt.rc_context(STYLE):
        fig, (ax_ae, ax_ce) = plt.subplots(1, 2, sharex=True)
        for name, ax in (("ae", ax_ae), ("ce", ax_ce)):
            curves = [t.series(name) for t in traces.values() if t is not None and len(t)]
            for c in curves:
                ax.semilogy(c, color="0.7", lw=0.6)
            if curves:
                n = min(len(c) for c in curves)
                ax.semilogy(np.median([c[:n] for c in curves], axis=0), color="C0", lw=1.4,
                            label="median")
                ax.legend()
            ax.set_xlabel("iteration k")
            ax.set_ylabel(name.upper())
        return _save(fig, path)


def plot_scenarios(traces: dict, path: str) -> str:
    """Median AE per straggler scenario."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (scenario, runs) in enumerate(sorted(traces.items())):
            curves = [t.series("ae") for t in runs if t is not None and len(t)]
            if not curves:
                continue
            n = min(len(c) for c in curves)
            ax.semilogy(np.median([c[:n] for c in curves], axis=0), color=f"C{i}",
                        label=scenario.replace("scenario", "scenario "))
        ax.set_xlabel("iteration k")
        ax.set_ylabel("median AE")
        ax.legend()
        return _save(fig, path)
