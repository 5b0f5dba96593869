"""Human-readable report from a finished run directory.

Read-only over persisted artifacts: numbers are copied, never recomputed.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .pipeline import MissingArtifacts, RunPaths, read_json  # noqa: E402


def _read_trace(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [int(r["iteration"]) for r in rows], [float(r["gbest"]) for r in rows]


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def build_report(run_dir, dest=None) -> list[Path]:
    paths = RunPaths(run_dir)
    needed = [paths.train_metrics, paths.calibration, paths.run_report, paths.trace, paths.timings]
    missing = [p for p in needed if not p.exists()]
    if missing:
        raise MissingArtifacts(missing)
    train = read_json(paths.train_metrics)
    calib = read_json(paths.calibration)
    run = read_json(paths.run_report)
    timings = read_json(paths.timings)
    it, gbest = _read_trace(paths.trace)

    out = Path(dest) if dest else paths.root / "report"
    out.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    ax.plot(it, gbest, lw=1.5)
    ax.set_xlabel("iteration")
    ax.set_ylabel("best predicted objective")
    ax.set_title(f"ARPSO convergence ({run['benchmark']})")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    curve = out / "convergence.png"
    fig.savefig(curve, metadata={"Software": None})
    plt.close(fig)

    rows = []
    for model in ("generator", "reducer"):
        for k in ("mse", "psnr", "ssim"):
            rows.append(("resvae", model, k, train[model][k]))
    for name, m in train["surrogates"].items():
        for k in ("r2", "raae", "rmae"):
            rows.append(("lssvr", name, k, m[k]))
    for k in ("r2", "raae", "rmae"):
        rows.append(("lssvr", "objective", k, train["objective"][k]))
    rows.append(("lssvr", "param", "r2_mean", train["param_r2_mean"]))
    rows.append(("filter", "threshold", "C", calib["threshold"]))
    for k in ("heldout_acceptance", "corrupted_rejection"):
        if k in calib:
            rows.append(("filter", "rates", k, calib[k]))
    for k in ("predicted_objective", "true_objective", "oracle_objective", "relative_gap",
              "infeasible_share", "fitness_evaluations"):
        rows.append(("optimize", "result", k, run[k]))
    for which in ("cdr_visited", "cdr_prior"):
        for k in ("mean", "variance", "n", "passed"):
            rows.append(("cdr", which, k, run[which][k]))

    table = out / "metrics.csv"
    with open(table, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["section", "item", "metric", "value"])
        for r in rows:
            w.writerow([*r[:3], repr(r[3]) if isinstance(r[3], float) else r[3]])

    width = max(len(f"{a}/{b}/{c}") for a, b, c, _ in rows)
    lines = [f"{a}/{b}/{c}".ljust(width) + "  " + _fmt(v) for a, b, c, v in rows]
    lines += ["", "recovered design: " + ", ".join(f"{k}={_fmt(v)}" for k, v in run["recovered_design"].items()),
              "oracle design:    " + ", ".join(f"{k}={_fmt(v)}" for k, v in run["oracle_design"].items())]
    text = out / "report.txt"
    text.write_text("\n".join(lines) + "\n", encoding="utf-8")

    # wall clock lives in its own file so the files above stay reproducible
    clock = out / "timings.csv"
    with open(clock, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["stage", "seconds"])
        for stage, sec in sorted(timings.items()):
            w.writerow([stage, sec])
    return [curve, table, text, clock]
