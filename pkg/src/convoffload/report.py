"""Strategy grids, comparison tables and group-size sweeps.

Figures are written with matplotlib's SVG backend with the hash salt and the
date metadata pinned, so the same inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .conv_core import LayerSpec, nb_op_value  # noqa: E402
from .exec_model import HardwareSpec, Strategy, validate_strategy  # noqa: E402
from .strategies import GroupSchedule, compile_schedule, GENERATORS  # noqa: E402

PALETTE = [matplotlib.colors.to_hex(c) for c in plt.get_cmap("Set3").colors]  # 12 colours
SWEEP_FIELDS = ("axis", "strategy", "duration", "peak_footprint", "load_traffic", "write_traffic")

_RC = {
    "svg.hashsalt": "convoffload",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def group_color(k: int) -> str:
    """Colour of 1-based group ``k``."""
    return PALETTE[(k - 1) % len(PALETTE)]


def grid_labels(schedule: GroupSchedule, layer: LayerSpec) -> list[list[int]]:
    labels = [[0] * layer.w_out for _ in range(layer.h_out)]
    for k, g in enumerate(schedule.groups, start=1):
        for p in g:
            labels[p.i][p.j] = k
    return labels


def ascii_grid(schedule: GroupSchedule, layer: LayerSpec) -> str:
    labels = grid_labels(schedule, layer)
    width = len(str(len(schedule)))
    return "\n".join(" ".join(f"{x:>{width}}" for x in row) for row in labels) + "\n"


def _svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def render_strategy_grid(schedule: GroupSchedule, layer: LayerSpec,
                         title: str | None = None) -> tuple[str, str]:
    """Output grid with each cell coloured and labelled by its group.

    Returns ``(svg, ascii)``.
    """
    labels = grid_labels(schedule, layer)
    H, W = layer.h_out, layer.w_out
    cell = 0.45 if max(H, W) <= 16 else 7.0 / max(H, W)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(2.0, W * cell), max(2.0, H * cell)))
        for i in range(H):
            for j in range(W):
                k = labels[i][j]
                ax.add_patch(Rectangle((j, i), 1, 1, facecolor=group_color(k),
                                       edgecolor="#444444", linewidth=0.5))
                if max(H, W) <= 32:
                    ax.text(j + 0.5, i + 0.5, str(k), ha="center", va="center",
                            fontsize=8 if max(H, W) <= 12 else 5)
        ax.set_xlim(0, W)
        ax.set_ylim(H, 0)
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
        if title:
            ax.set_title(title)
        svg = _svg(fig)
    return svg, ascii_grid(schedule, layer)


@dataclass
class ComparisonRow:
    strategy: str
    duration: float
    peak_footprint: int
    load_traffic: int
    write_traffic: int
    n_steps: int
    valid: bool
    violations: list[str] = field(default_factory=list)


def compare(strategies: Sequence[tuple[str, Strategy]], layer: LayerSpec, hw: HardwareSpec,
            nb_data_reload: int = 2) -> list[ComparisonRow]:
    rows = []
    for name, strategy in strategies:
        report = validate_strategy(strategy, layer, hw, nb_data_reload)
        m = report.metrics
        rows.append(ComparisonRow(name, m.duration, m.peak_footprint, m.load_traffic,
                                  m.write_traffic, m.n_steps, report.ok,
                                  sorted(report.kinds())))
    return rows


def format_table(rows: Sequence[ComparisonRow]) -> str:
    head = f"{'strategy':<14}{'duration':>10}{'peak':>8}{'loads':>8}{'writes':>8}{'steps':>7}  valid"
    lines = [head, "-" * len(head)]
    for r in rows:
        flag = "yes" if r.valid else "no (" + ",".join(r.violations) + ")"
        lines.append(f"{r.strategy:<14}{r.duration:>10g}{r.peak_footprint:>8}"
                     f"{r.load_traffic:>8}{r.write_traffic:>8}{r.n_steps:>7}  {flag}")
    return "\n".join(lines) + "\n"


@dataclass
class SweepResult:
    axis_name: str
    axis: list[int]
    durations: dict[str, list[float]] = field(default_factory=dict)
    peaks: dict[str, list[int]] = field(default_factory=dict)
    loads: dict[str, list[int]] = field(default_factory=dict)
    writes: dict[str, list[int]] = field(default_factory=dict)

    def add(self, strategy: str, row: ComparisonRow):
        self.durations.setdefault(strategy, []).append(row.duration)
        self.peaks.setdefault(strategy, []).append(row.peak_footprint)
        self.loads.setdefault(strategy, []).append(row.load_traffic)
        self.writes.setdefault(strategy, []).append(row.write_traffic)

    def gains(self, target: str = "ilp", against=("zigzag", "rowbyrow")) -> list[float]:
        """Percent gain of ``target`` over the best of ``against``, per axis value."""
        out = []
        for n in range(len(self.axis)):
            best = min(self.durations[s][n] for s in against if s in self.durations)
            out.append(100.0 * (best - self.durations[target][n]) / best)
        return out

    def write_csv(self, stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for n, x in enumerate(self.axis):
            for s in self.durations:
                w.writerow([x, s, f"{self.durations[s][n]:g}", self.peaks[s][n],
                            self.loads[s][n], self.writes[s][n]])


def plot_sweep(sweep: SweepResult, path=None, ylabel="duration (cycles)") -> str:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        for n, (name, ys) in enumerate(sweep.durations.items()):
            ax.plot(sweep.axis, ys, marker="o", markersize=3, linewidth=1.2,
                    color=PALETTE[(3 + 2 * n) % len(PALETTE)] if name != "ilp" else "#222222",
                    label=name)
        ax.set_xlabel(sweep.axis_name)
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        svg = _svg(fig)
    if path is not None:
        Path(path).write_text(svg, encoding="utf-8")
    return svg


def hardware_for_group_size(layer: LayerSpec, hw: HardwareSpec, group_size: int) -> HardwareSpec:
    """Accelerator whose per-step capacity is exactly ``group_size`` patches."""
    return replace(hw, nbop_pe=group_size * nb_op_value(layer) * layer.c_out)


def sweep_group_sizes(layer: LayerSpec, hw: HardwareSpec, sizes: Sequence[int],
                      strategies=("rowbyrow", "zigzag"), nb_data_reload: int = 2,
                      optimize: bool = False, solver_options: dict | None = None,
                      keep_schedules: bool = False):
    """Duration of each generator (and optionally the solver) per group size.

    Returns the sweep and, when ``keep_schedules`` is set, a dict
    ``{(strategy, size): GroupSchedule}``.
    """
    from .optimizer import best_heuristic, build_model, solve

    sweep = SweepResult("group size", list(sizes))
    schedules = {}
    for m in sizes:
        cell_hw = hardware_for_group_size(layer, hw, m)
        for name in strategies:
            sched = GENERATORS[name](layer, m)
            schedules[(name, m)] = sched
            strat = compile_schedule(sched, layer, cell_hw, source=name)
            sweep.add(name, compare([(name, strat)], layer, cell_hw, nb_data_reload)[0])
        if optimize:
            model = build_model(layer, cell_hw, None, nb_data_reload)
            _, start = best_heuristic(layer, m, model)
            sol = solve(model, mip_start=start, **(solver_options or {}))
            schedules[("ilp", m)] = sol.schedule
            strat = compile_schedule(sol.schedule, layer, cell_hw, source="ilp")
            sweep.add("ilp", compare([("ilp", strat)], layer, cell_hw, nb_data_reload)[0])
    return (sweep, schedules) if keep_schedules else sweep
