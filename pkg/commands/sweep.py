# commands/sweep.py
from __future__ import annotations

import logging

from commands.common import add_dataset, autoencoder, dataset, maybe_xlsx, out_dir, parse_delays
from services.evaluation import delay_sweep
from services.reporting import SWEEP_COLUMNS, sweep_rows, write_rows
from services.schemas import RunConfig
from services.tracking import tracker_path

log = logging.getLogger("avan.cli")

HELP = "train one model per assumed hemodynamic delay and compare hit rates"


def add_arguments(p) -> None:
    add_dataset(p)
    p.add_argument("--delays", default=None, help="comma-separated seconds (default SWEEP_DELAYS)")
    p.add_argument("--ae", default=None, help="autoencoder checkpoint shared by every run")
    p.add_argument("--fresh", action="store_true", help="ignore a previous tracker and retrain every delay")


def run(args, cfg: RunConfig) -> int:
    m = dataset(args, cfg)
    delays = parse_delays(args.delays, cfg.sweep_delays)
    out = out_dir(args, cfg, "sweep")
    track = tracker_path(out, "sweep_tracking")
    if args.fresh and track.exists():
        track.unlink()
    rows = delay_sweep(m, delays, cfg, ae=autoencoder(args.ae), track_path=track)
    table = sweep_rows(rows)
    write_rows(out / "sweep.csv", SWEEP_COLUMNS, table)
    maybe_xlsx(cfg, out, {"sweep": table})
    best = next(r for r in rows if r.best)
    log.info("[sweep] best_delay_s=%g hit_rate=%.4f rows=%s", best.delay_s, best.hit_rate, len(rows))
    print(out / "sweep.csv")
    return 0
