"""Render sweep results to figure files next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import SweepResult, sweep_to_plotdata

_COLORS = plt.rcParams["axes.prop_cycle"].by_key()["color"]


def _series_label(series: dict) -> str:
    if series["mechanism"] == "none":
        return series["pipeline_id"]
    return f"{series['pipeline_id']} ({series['mechanism']})"


def _plot_metric(plotdata: dict, metric: str, ylabel: str, title: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    drawn = 0
    for i, series in enumerate(s for s in plotdata["series"] if s["metric"] == metric):
        xs = [p["epsilon"] for p in series["points"]]
        means = [p["mean"] for p in series["points"]]
        lo = [p["min"] for p in series["points"]]
        hi = [p["max"] for p in series["points"]]
        color = _COLORS[i % len(_COLORS)]
        ax.plot(xs, means, marker="o", color=color, label=_series_label(series))
        ax.fill_between(xs, lo, hi, color=color, alpha=0.15)
        drawn += 1
    if not drawn:
        plt.close(fig)
        return
    ax.set_xscale("log", base=2)
    ax.set_xlabel("privacy budget ε")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_direct_indirect(plotdata: dict, path: Path) -> None:
    """Stacked direct/indirect leakage bars per pipeline, one panel per epsilon."""
    pairs = sorted(
        {(s["pipeline_id"], s["mechanism"]) for s in plotdata["series"] if s["metric"] == "pct_direct"}
    )
    if not pairs:
        return
    eps_values = plotdata["epsilon_grid"]
    by_key = {(s["pipeline_id"], s["mechanism"], s["metric"]): s for s in plotdata["series"]}

    fig, axes = plt.subplots(
        1, len(eps_values), figsize=(1.8 * len(eps_values) + 2, 4.2), sharey=True
    )
    if len(eps_values) == 1:
        axes = [axes]
    for ax, eps in zip(axes, eps_values):
        xs, direct, indirect = [], [], []
        for pid, mech in pairs:
            d = by_key.get((pid, mech, "pct_direct"))
            i = by_key.get((pid, mech, "pct_indirect"))
            dp = next((p["mean"] for p in d["points"] if p["epsilon"] == eps), None) if d else None
            ip = next((p["mean"] for p in i["points"] if p["epsilon"] == eps), None) if i else None
            if dp is None and ip is None:
                continue
            xs.append(f"{pid}\n({mech})" if mech != "none" else pid)
            direct.append(dp or 0.0)
            indirect.append(ip or 0.0)
        ax.bar(xs, direct, color="#333366", label="direct")
        ax.bar(xs, indirect, bottom=direct, color="#9999cc", label="indirect")
        ax.set_title(f"ε={eps:g}", fontsize=9)
        ax.tick_params(axis="x", rotation=90, labelsize=6)
    axes[0].set_ylabel("leakage %")
    axes[0].legend(fontsize=8)
    fig.suptitle("PII leakage by pipeline and privacy budget (direct vs indirect)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep_figures(sweep: SweepResult, out_dir: str | Path) -> list[Path]:
    """Write the standard figure set; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plotdata = sweep_to_plotdata(sweep)
    created: list[Path] = []

    targets = [
        ("pct_total", "leakage %", "Privacy leakage vs privacy budget", "leakage_vs_epsilon.png"),
        ("entity_survival", "surviving entities", "Entity annotation survival", "entity_survival_vs_epsilon.png"),
        ("relation_survival", "surviving relations", "Relation annotation survival", "relation_survival_vs_epsilon.png"),
    ]
    for metric, ylabel, title, fname in targets:
        path = out_dir / fname
        _plot_metric(plotdata, metric, ylabel, title, path)
        if path.exists():
            created.append(path)

    bars = out_dir / "leakage_direct_indirect.png"
    _plot_direct_indirect(plotdata, bars)
    if bars.exists():
        created.append(bars)
    return created
