"""
Report Command - aggregates estimate reports and sweep results under an output root
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from conelab.config import LabConfig
from conelab.errors import ArtifactError
from conelab.estimates import EstimateReport, uniformity_ratios
from conelab.sweeps import SweepAxis
from conelab.utils.artifacts import read_json, write_csv, write_json

logger = logging.getLogger(__name__)

LOG_LOG_AXES = {SweepAxis.GAMMA, SweepAxis.TIME_ZERO, SweepAxis.MESH_REFINE, SweepAxis.TIME_REFINE}

AXIS_LABELS = {
    SweepAxis.GAMMA: ("gamma", "max |phi_gamma - phi_cusp|"),
    SweepAxis.EPSILON: ("epsilon", "max (phi_eps - phi_cusp)"),
    SweepAxis.TIME_ZERO: ("t", "L1 distance to phi0"),
    SweepAxis.MESH_REFINE: ("h", "sup error"),
    SweepAxis.TIME_REFINE: ("dt", "sup error"),
    SweepAxis.DOMAIN_SIZE: ("domain length", "window gap"),
}


def collect_estimates(out_dir: Path) -> List[EstimateReport]:
    """Every EstimateReport found in estimates.json files below out_dir, in path order"""
    reports = []
    for path in sorted(Path(out_dir).rglob("estimates.json")):
        payload = read_json(path)
        for item in payload.get("reports", []):
            reports.append(EstimateReport.model_validate(item))
    return reports


def estimate_table(reports: List[EstimateReport]) -> Dict[str, Dict[float, float]]:
    """proposition -> gamma -> fitted_C; repeated (proposition, gamma) pairs keep the largest C"""
    table: Dict[str, Dict[float, float]] = {}
    for report in reports:
        row = table.setdefault(report.name, {})
        current = row.get(report.gamma)
        if current is None or report.fitted_C > current or math.isnan(report.fitted_C):
            row[report.gamma] = report.fitted_C
    return table


def _sweep_files(out_dir: Path) -> List[Tuple[Path, dict]]:
    return [(path, read_json(path)) for path in sorted(Path(out_dir).rglob("sweep_*.json"))]


def _gnuplot(title: str, data: str, xlabel: str, ylabel: str, logscale: bool, output: str) -> str:
    lines = [
        f"# {title}",
        'set datafile separator ","',
        "set key autotitle columnhead",
        f'set title "{title}"',
        f'set xlabel "{xlabel}"',
        f'set ylabel "{ylabel}"',
    ]
    if logscale:
        lines.append("set logscale xy")
    lines += [
        "set terminal pngcairo size 800,600",
        f'set output "{output}"',
        f'plot "{data}" using 1:2 with linespoints',
    ]
    return "\n".join(lines) + "\n"


def emit_plots(out_dir: Path) -> List[Path]:
    """
    Plain-text gnuplot scripts: one per sweep result, next to its CSV, and
    one per proposition plotting fitted_C against gamma.

    Raises:
        ArtifactError: out_dir is missing or holds no sweep or estimate artifacts
    """
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise ArtifactError(f"output directory {out_dir} does not exist", path=str(out_dir))

    scripts: List[Path] = []
    for path, payload in _sweep_files(out_dir):
        name = path.stem[len("sweep_"):]
        csv = path.with_suffix(".csv")
        if not csv.exists():
            continue
        axis = SweepAxis(payload["axis"])
        xlabel, ylabel = AXIS_LABELS[axis]
        script = path.parent / f"plot_sweep_{name}.gp"
        script.write_text(
            _gnuplot(f"{name} sweep", csv.name, xlabel, ylabel, axis in LOG_LOG_AXES, f"plot_sweep_{name}.png")
        )
        scripts.append(script)

    for name, row in sorted(estimate_table(collect_estimates(out_dir)).items()):
        data = out_dir / f"estimates_{name}.csv"
        write_csv(data, ("gamma", "fitted_C"), sorted(row.items()))
        logscale = all(g > 0 for g in row) and all(c > 0 for c in row.values())
        script = out_dir / f"plot_estimate_{name}.gp"
        script.write_text(_gnuplot(name, data.name, "gamma", "fitted C", logscale, f"plot_estimate_{name}.png"))
        scripts.append(script)

    if not scripts:
        raise ArtifactError(f"no sweep or estimate artifacts under {out_dir}", path=str(out_dir))
    logger.info(f"Wrote {len(scripts)} plot scripts", extra={"out_dir": str(out_dir)})
    return scripts


def _format_table(table: Dict[str, Dict[float, float]]) -> str:
    gammas = sorted({g for row in table.values() for g in row}, reverse=True)
    header = ["proposition"] + [f"gamma={g:.6g}" for g in gammas]
    rows = [header]
    for name in sorted(table):
        row = table[name]
        rows.append([name] + [f"{row[g]:.6g}" if g in row else "-" for g in gammas])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def report_command(manifest, config: Optional[LabConfig] = None) -> int:
    """summary.json and summary.txt (proposition x gamma -> fitted_C) plus plot scripts"""
    out_dir = Path(manifest.out_dir)
    reports = collect_estimates(out_dir)
    sweeps = _sweep_files(out_dir)
    if not reports and not sweeps:
        raise ArtifactError(f"no estimate reports or sweep results under {out_dir}", path=str(out_dir))

    table = estimate_table(reports)
    summary = {
        "estimates": {name: {f"{g:.17g}": c for g, c in sorted(row.items())} for name, row in table.items()},
        "uniformity": uniformity_ratios(reports),
        "failed": sorted({r.name for r in reports if not r.passed}),
        "sweeps": [
            {
                "path": str(path.relative_to(out_dir)),
                "axis": payload.get("axis"),
                "verdict": payload.get("verdict"),
            }
            for path, payload in sweeps
        ],
    }
    write_json(out_dir / "summary.json", summary)
    (out_dir / "summary.txt").write_text(_format_table(table) if table else "no estimate reports\n")
    emit_plots(out_dir)
    logger.info(
        "Report written",
        extra={"reports": len(reports), "sweeps": len(sweeps), "out_dir": str(out_dir)},
    )
    return 0
