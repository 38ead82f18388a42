"""Human-readable run report and observed-value figures.

The text report prints run statistics, a per-core table of the values each
victim program read back (with their sum), protocol errors and monitor
alerts.  ``save_figure`` renders the same per-core observed values as bar
charts into an image file next to whatever trace the run produced.
"""

from __future__ import annotations

from .fabric import SimReport
from .scenario import ScenarioConfig


def _victim_rows(cfg: ScenarioConfig, report: SimReport, spec) -> list[tuple[int, int | None]]:
    line_size = cfg.system.line_size
    rows = []
    for i in range(spec.n):
        line_index = (spec.base + i * line_size) // line_size
        rows.append((i, report.per_core_load_results.get((spec.core, line_index))))
    return rows


def render_report(cfg: ScenarioConfig, report: SimReport) -> str:
    out: list[str] = []
    out.append("== run report ==")
    out.append(f"cycles:          {report.cycles_elapsed}")
    out.append(f"messages:        {report.messages_delivered}")
    out.append(f"protocol errors: {len(report.protocol_errors)}")
    out.append(f"alerts:          {len(report.monitor_alerts)}")
    out.append(f"deadlock:        {'yes' if report.deadlocked else 'no'}")

    for spec in cfg.workloads:
        if spec.kind == "victim_array":
            rows = _victim_rows(cfg, report, spec)
            out.append("")
            out.append(f"-- core{spec.core} observed array "
                       f"(base={spec.base:#x}, n={spec.n}) --")
            out.append("idx  value")
            total = 0
            for i, value in rows:
                shown = "-" if value is None else str(value)
                out.append(f"{i:<4d} {shown}")
                total += value or 0
            out.append(f"sum  {total}")
        elif spec.kind == "random":
            loads = report.per_core_loads.get(spec.core, [])
            out.append("")
            out.append(f"-- core{spec.core} random workload: "
                       f"{spec.ops} ops, {len(loads)} loads completed --")

    if report.trojan_phase is not None:
        out.append("")
        out.append(f"-- trojan: phase={report.trojan_phase} "
                   f"blocked={report.trojan_blocked} "
                   f"snooped={len(report.trojan_snoop)} --")

    if report.protocol_errors:
        out.append("")
        out.append("-- protocol errors --")
        for err in report.protocol_errors:
            out.append(err.describe())

    if report.monitor_alerts:
        out.append("")
        out.append("-- alerts --")
        for alert in report.monitor_alerts:
            detail = f": {alert.details}" if alert.details else ""
            out.append(
                f"[cycle {alert.cycle}] {alert.kind.value} "
                f"@ {alert.address:#x}{detail}"
            )
    return "\n".join(out) + "\n"


def save_figure(cfg: ScenarioConfig, report: SimReport, path: str) -> None:
    """Bar-chart the values each victim core read back, one panel per core."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    victims = [s for s in cfg.workloads if s.kind == "victim_array"]
    if not victims:
        victims = []
    n_panels = max(1, len(victims))
    fig, axes = plt.subplots(
        n_panels, 1, figsize=(7, 2.6 * n_panels), squeeze=False
    )
    for ax, spec in zip(axes.flat, victims):
        rows = _victim_rows(cfg, report, spec)
        xs = [i for i, _ in rows]
        ys = [v if v is not None else 0 for _, v in rows]
        ax.bar(xs, ys, color="#336699")
        ax.set_xlabel("array index")
        ax.set_ylabel("observed value")
        ax.set_title(f"core{spec.core} observed values (sum={sum(ys)})")
        ax.set_xticks(xs)
    if not victims:
        axes.flat[0].set_title("no victim workloads in this run")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
