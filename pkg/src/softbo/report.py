"""Results tables and SVG figures from a run directory."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import cell_id
from .episode import PolicyEvaluator
from .optimizers import read_records_csv
from .runner import config_from_manifest, load_manifest


@dataclass
class ResultsTable:
    """mean and sample std of best_so_far across seeds per (method, budget, P)."""

    methods: list[str]
    budgets: list[int]
    P_values: list[int]
    cells: dict = field(default_factory=dict)   # (method, budget, P) -> (mean, std, n_seeds)

    def top(self, budget: int, P: int) -> str | None:
        vals = [(self.cells[(m, budget, P)][0], -i, m) for i, m in enumerate(self.methods)
                if (m, budget, P) in self.cells]
        return max(vals)[2] if vals else None

    def render(self) -> str:
        """Aligned text; the top method of each (P, budget) column is starred."""
        head = ["method", "budget", *(f"P={P}" for P in self.P_values)]
        rows = []
        for m in self.methods:
            for b in self.budgets:
                row = [m, str(b)]
                for P in self.P_values:
                    c = self.cells.get((m, b, P))
                    if c is None:
                        row.append("missing")
                        continue
                    mark = " *" if self.top(b, P) == m else "  "
                    row.append(f"{c[0]:.3f} +/- {c[1]:.3f}{mark}")
                rows.append(row)
        widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]
        fmt = lambda r: "  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip()  # noqa: E731
        return "\n".join([fmt(head), fmt(["-" * w for w in widths]), *map(fmt, rows)]) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "budget", "P", "mean", "std", "seeds", "top"])
        for m in self.methods:
            for b in self.budgets:
                for P in self.P_values:
                    c = self.cells.get((m, b, P))
                    if c is None:
                        w.writerow([m, b, P, "", "", 0, ""])
                    else:
                        w.writerow([m, b, P, repr(c[0]), repr(c[1]), c[2],
                                    int(self.top(b, P) == m)])
        return buf.getvalue()


def summarize(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, float)
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), std


def checkpoint(records, n: int) -> float:
    """best_so_far after ``n`` trials: running max of the first ``n`` J values."""
    if len(records) < n:
        raise ValueError(f"only {len(records)} records, need {n}")
    return max(r.J for r in records[:n])


def _load_cells(run_dir: Path, cfg, manifest):
    out = {}
    for m in cfg.methods:
        for P in cfg.P_values:
            for s in cfg.seeds:
                cid = cell_id(m.id, P, s)
                p = run_dir / "cells" / cid / "records.csv"
                if manifest["cells"].get(cid, {}).get("status") == "done" and p.exists():
                    out[(m.id, P, s)] = read_records_csv(p)
    return out


def build_table(run_dir) -> ResultsTable:
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    cfg = config_from_manifest(manifest)
    cells = _load_cells(run_dir, cfg, manifest)
    table = ResultsTable([m.id for m in cfg.methods], list(cfg.budgets), list(cfg.P_values))
    for m in table.methods:
        for b in table.budgets:
            for P in table.P_values:
                vals = [checkpoint(cells[(m, P, s)], b) for s in cfg.seeds if (m, P, s) in cells]
                if vals:
                    table.cells[(m, b, P)] = (*summarize(vals), len(vals))
    return table


def table(run_dir) -> tuple[ResultsTable, str]:
    """Write ``table.txt`` and ``table.csv``; returns the table and its text."""
    run_dir = Path(run_dir)
    t = build_table(run_dir)
    text = t.render()
    expected = len(t.methods) * len(t.budgets) * len(t.P_values)
    if len(t.cells) < expected:
        text += f"note: {expected - len(t.cells)} of {expected} cells have no completed seeds\n"
    (run_dir / "table.txt").write_text(text)
    (run_dir / "table.csv").write_text(t.to_csv())
    return t, text


# ---------------------------------------------------------------- plotting

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "softbo"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def curve_data(run_dir) -> dict:
    """{P: {method: (n, mean, lo, hi)}} best-so-far curves across seeds."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    cfg = config_from_manifest(manifest)
    cells = _load_cells(run_dir, cfg, manifest)
    out = {}
    for P in cfg.P_values:
        per = {}
        for m in cfg.methods:
            runs = [cells[(m.id, P, s)] for s in cfg.seeds if (m.id, P, s) in cells]
            if not runs:
                continue
            Y = np.array([[r.best_so_far for r in rec] for rec in runs])
            per[m.id] = (np.arange(1, Y.shape[1] + 1), Y.mean(0), Y.min(0), Y.max(0))
        if per:
            out[P] = per
    return out


def speed_data(run_dir) -> dict:
    """{P: {method: (t, speed)}} dense tip speed of each method's best policy."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    cfg = config_from_manifest(manifest)
    cells = _load_cells(run_dir, cfg, manifest)
    model = cfg.model()
    out = {}
    for P in cfg.P_values:
        ev = PolicyEvaluator(model, cfg.task_for(P))
        per = {}
        for m in cfg.methods:
            recs = [r for s in cfg.seeds if (m.id, P, s) in cells for r in cells[(m.id, P, s)]]
            if not recs:
                continue
            best = max(recs, key=lambda r: (r.J, -r.seed, -r.n))
            traj = ev.rollout(np.array(best.theta))
            per[m.id] = (traj.dense_t, traj.dense_speeds)
        if per:
            out[P] = per
    return out


def _data_comment(columns: list[str], rows) -> str:
    lines = [",".join(columns)]
    lines += [",".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row) for row in rows]
    return "<!-- data\n" + "\n".join(lines) + "\n-->\n"


def _save_svg(fig, path: Path, comment: str) -> None:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    svg = buf.getvalue()
    i = svg.find("<svg")
    path.write_text(svg[:i] + comment + svg[i:])


def plot(run_dir, log=print) -> list[Path]:
    """best_so_far_P<P>.svg and tip_speed_P<P>.svg per discretization."""
    run_dir = Path(run_dir)
    curves = curve_data(run_dir)
    if not curves:
        log(f"no completed cells in {run_dir}; nothing to plot")
        return []
    plt = _pyplot()
    written = []
    for P, per in curves.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        rows = []
        for k, (m, (n, mean, lo, hi)) in enumerate(per.items()):
            ax.fill_between(n, lo, hi, color=f"C{k}", alpha=0.2, linewidth=0)
            ax.plot(n, mean, color=f"C{k}", label=m)
            rows += [(m, int(a), float(b), float(c), float(d)) for a, b, c, d in zip(n, mean, lo, hi)]
        ax.set_xlabel("trial")
        ax.set_ylabel("best so far")
        ax.set_title(f"P = {P}")
        ax.legend()
        fig.tight_layout()
        path = run_dir / f"best_so_far_P{P}.svg"
        _save_svg(fig, path, _data_comment(["method", "n", "mean", "min", "max"], rows))
        plt.close(fig)
        written.append(path)
    for P, per in speed_data(run_dir).items():
        fig, ax = plt.subplots(figsize=(6, 4))
        rows = []
        for k, (m, (t, v)) in enumerate(per.items()):
            ax.plot(t, v, color=f"C{k}", label=m)
            rows += [(m, float(a), float(b)) for a, b in zip(t, v)]
        ax.set_xlabel("time (s)")
        ax.set_ylabel("tip speed (m/s)")
        ax.set_title(f"best policy per method, P = {P}")
        ax.legend()
        fig.tight_layout()
        path = run_dir / f"tip_speed_P{P}.svg"
        _save_svg(fig, path, _data_comment(["method", "t", "speed"], rows))
        plt.close(fig)
        written.append(path)
    return written


def parse_data_comment(svg_text: str) -> list[list[str]]:
    start = svg_text.index("<!-- data\n") + len("<!-- data\n")
    end = svg_text.index("\n-->", start)
    return [line.split(",") for line in svg_text[start:end].splitlines()]


__all__ = ["ResultsTable", "summarize", "checkpoint", "build_table", "table", "plot",
           "curve_data", "speed_data", "parse_data_comment"]
