# services/reporting.py
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import AvanError
from services.formats import write_frame
from services.schemas import HitRateReport, RelationalStatsRow, SweepRow

# ---------- file utils ----------

def ensure_reports_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path



def write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True), encoding="utf-8")


def write_rows(path: Path, cols: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(cols), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


# ---------- report tables ----------

HITRATE_COLUMNS = ["split", "mode", "hits", "total", "rate", "chance", "misses"]
STATS_COLUMNS = ["row", "Positive", "Negative", "Regularization", "reg_original", "reg_blank", "samples"]
SWEEP_COLUMNS = ["delay_s", "hit_rate", "chance", "positive_mean", "samples", "best"]
NETWORK_COLUMNS = ["rank", "index", "activation", "support_size", "max_abs_z", "flagged",
                   "template", "template_corr"]
OBJECT_COLUMNS = ["object", "moving", "share"]


def hitrate_rows(reports: Sequence[HitRateReport]) -> List[Dict[str, Any]]:
    return [{"split": r.split, "mode": r.mode, "hits": r.hits, "total": r.total,
             "rate": f"{r.rate:.6f}", "chance": f"{r.chance:.6f}", "misses": r.misses} for r in reports]


def stats_rows(rows: Sequence[RelationalStatsRow]) -> List[Dict[str, Any]]:
    return [{"row": r.row, "Positive": f"{r.positive:.6f}", "Negative": f"{r.negative:.6f}",
             "Regularization": f"{r.regularization:.6f}", "reg_original": f"{r.reg_original:.6f}",
             "reg_blank": f"{r.reg_blank:.6f}", "samples": r.samples} for r in rows]


def sweep_rows(rows: Sequence[SweepRow]) -> List[Dict[str, Any]]:
    return [{"delay_s": f"{r.delay_s:g}", "hit_rate": f"{r.hit_rate:.6f}", "chance": f"{r.chance:.6f}",
             "positive_mean": f"{r.positive_mean:.6f}", "samples": r.samples,
             "best": "yes" if r.best else ""} for r in rows]


def network_rows(networks, match=None) -> List[Dict[str, Any]]:
    """One row per network in rank order; with a NetworkMatch, the template each network best explains."""
    best_for: Dict[int, Tuple[int, float]] = {}
    if match is not None:
        for t, (i, c) in enumerate(zip(match.best, match.best_corr)):
            if i >= 0 and (i not in best_for or abs(c) > abs(best_for[i][1])):
                best_for[i] = (t, c)
    out = []
    for rank, n in enumerate(networks):
        t = best_for.get(rank)
        out.append({
            "rank": rank,
            "index": n.index,
            "activation": f"{n.activation:.6g}",
            "support_size": len(n.support),
            "max_abs_z": f"{float(np.max(np.abs(n.zmap))) if n.zmap.size else 0.0:.4f}",
            "flagged": "yes" if n.flagged else "",
            "template": "" if t is None else t[0],
            "template_corr": "" if t is None else f"{t[1]:.4f}",
        })
    return out


def object_rows(interest, moving: Sequence[bool]) -> List[Dict[str, Any]]:
    rows = [{"object": k, "moving": "yes" if moving[k] else "", "share": f"{s:.6f}"}
            for k, s in enumerate(interest.per_object)]
    rows.append({"object": "moving", "moving": "", "share": f"{interest.moving:.6f}"})
    rows.append({"object": "stationary", "moving": "", "share": f"{interest.stationary:.6f}"})
    rows.append({"object": "background", "moving": "", "share": f"{interest.background:.6f}"})
    return rows


def write_network_maps(path: Path, networks, coords: Optional[np.ndarray] = None) -> Path:
    """voxel[,i,j,k] then one z column per network (rank order)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    v = networks[0].zmap.shape[0] if networks else 0
    head = ["voxel"] + (["i", "j", "k"] if coords is not None else []) + [f"net{n.index}" for n in networks]
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(head)
        for vox in range(v):
            row: List[Any] = [vox]
            if coords is not None:
                row += [int(c) for c in coords[vox]]
            row += [f"{n.zmap[vox]:.5f}" for n in networks]
            w.writerow(row)
    return path


def write_grid_csv(path: Path, grid: np.ndarray) -> Path:
    """Plain F_h x F_w matrix, no header."""
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(grid, dtype=np.float64), delimiter=",", fmt="%.6f")
    return path


def write_xlsx(path: Path, tables: Dict[str, List[Dict[str, Any]]]) -> Path:
    """All report tables as sheets of one workbook."""
    try:
        import openpyxl
    except Exception as exc:
        raise AvanError("openpyxl is required for REPORT_XLSX; install it via 'pip install openpyxl'.") from exc
    wb = openpyxl.Workbook()
    wb.remove(wb.active)
    for name, rows in tables.items():
        ws = wb.create_sheet(title=name[:31])
        if not rows:
            continue
        cols = list(rows[0].keys())
        ws.append(cols)
        for r in rows:
            ws.append([r.get(c) for c in cols])
    path.parent.mkdir(parents=True, exist_ok=True)
    wb.save(path)
    return path


# ---------- overlays ----------

GAZE_RED = (1.0, 0.0, 0.0)


def draw_gaze(image: np.ndarray, point: Optional[Tuple[float, float]], radius: int = 2) -> np.ndarray:
    """Filled red disc at `point` on a (3, H, W) copy of the image."""
    out = np.array(image, dtype=np.float64, copy=True)
    if point is None:
        return out
    h, w = out.shape[1:]
    yy, xx = np.mgrid[0:h, 0:w]
    disc = (xx + 0.5 - point[0]) ** 2 + (yy + 0.5 - point[1]) ** 2 <= (radius + 0.5) ** 2
    for c, v in enumerate(GAZE_RED):
        out[c][disc] = v
    return out


def mask_overlay(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Image dimmed outside the mask and tinted red inside it."""
    img = np.asarray(image, dtype=np.float64)
    m = np.clip(np.asarray(mask, dtype=np.float64), 0.0, 1.0)[None]
    tint = np.zeros_like(img)
    tint[0] = 1.0
    return np.clip(img * (0.35 + 0.65 * m) * (1 - 0.3 * m) + 0.3 * m * tint, 0.0, 1.0)


def write_overlays(out_dir: Path, stem: str, image: np.ndarray, attended: np.ndarray, neglected: np.ndarray,
                   mask: np.ndarray, gaze: Optional[Tuple[float, float]] = None) -> List[Path]:
    """<stem>_attended.ppm, <stem>_neglected.ppm, <stem>_overlay.ppm."""
    ensure_reports_dir(out_dir)
    return [
        write_frame(out_dir / f"{stem}_attended.ppm", draw_gaze(attended, gaze)),
        write_frame(out_dir / f"{stem}_neglected.ppm", draw_gaze(neglected, gaze)),
        write_frame(out_dir / f"{stem}_overlay.ppm", draw_gaze(mask_overlay(image, mask), gaze)),
    ]
