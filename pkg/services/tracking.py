# services/tracking.py
from __future__ import annotations

import json
import logging
import threading
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

log = logging.getLogger("avan.tracking")

_LOCK = threading.Lock()

# ---- status tokens ----
PENDING = "Pending"
DONE = "Done"
FAILED = "Failed"


def delay_key(delay_s: float) -> str:
    return f"{float(delay_s):g}"


def tracker_path(track_dir: Path, name: str = "sweep") -> Path:
    track_dir.mkdir(parents=True, exist_ok=True)
    return track_dir / f"{name}.json"


# ---- file IO ----

def _load_tracking(path: Path) -> Dict[str, Any]:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except Exception:
        return {"items": []}


def _save_tracking_atomic(path: Path, doc: Dict[str, Any]) -> None:
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(doc, indent=2, ensure_ascii=False, sort_keys=True), encoding="utf-8")
    tmp.replace(path)


# ---- init / update ----

def init_tracking(path: Path, delays: Sequence[float], fingerprint: Dict[str, Any]) -> Dict[str, Any]:
    """
    Creates the tracker, or keeps an existing one whose fingerprint (dataset,
    config, seed) matches so finished delays are not recomputed.
    """
    doc = _load_tracking(path) if path.exists() else None
    if doc and doc.get("fingerprint") == fingerprint:
        known = {it["delay"] for it in doc.get("items", [])}
        for d in delays:
            if delay_key(d) not in known:
                doc["items"].append({"delay": delay_key(d), "status": PENDING, "result": None})
        _save_tracking_atomic(path, doc)
        log.info("[tracking] resume path=%s pending=%s", path, len(pending_delays(path)))
        return doc
    doc = {
        "fingerprint": fingerprint,
        "created_at": datetime.now().isoformat(timespec="seconds"),
        "items": [{"delay": delay_key(d), "status": PENDING, "result": None} for d in delays],
    }
    _save_tracking_atomic(path, doc)
    return doc


def mark_status(path: Path, delay_s: float, status: str, result: Optional[Dict[str, Any]] = None,
                error: Optional[str] = None) -> None:
    with _LOCK:
        _mark(path, delay_key(delay_s), status, result, error)


def _mark(path: Path, key: str, status: str, result, error) -> None:
    doc = _load_tracking(path)
    for it in doc.get("items", []):
        if it.get("delay") == key:
            it["status"] = status
            it["result"] = result
            if error:
                it["error"] = error
            else:
                it.pop("error", None)
            break
    else:
        item = {"delay": key, "status": status, "result": result}
        if error:
            item["error"] = error
        doc.setdefault("items", []).append(item)
    _save_tracking_atomic(path, doc)


def pending_delays(path: Path) -> List[float]:
    return [float(it["delay"]) for it in _load_tracking(path).get("items", []) if it.get("status") != DONE]


def done_results(path: Path) -> Dict[str, Dict[str, Any]]:
    return {it["delay"]: it["result"] for it in _load_tracking(path).get("items", [])
            if it.get("status") == DONE and it.get("result") is not None}
