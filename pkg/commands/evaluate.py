# commands/evaluate.py
from __future__ import annotations

import logging

from commands.common import add_checkpoint, add_dataset, dataset, maybe_xlsx, out_dir, pairing_config
from core.errors import ValidationError
from services.alignment import split_samples
from services.dataset import build_samples
from services.evaluation import (
    evaluate_hit_rate,
    evaluate_object_interest,
    extract_networks,
    fmri_weights,
    match_networks,
    relational_stats,
    stats_table,
)
from services.formats import read_brain_mask
from services.inference import load_model
from services.reporting import (
    HITRATE_COLUMNS,
    NETWORK_COLUMNS,
    OBJECT_COLUMNS,
    STATS_COLUMNS,
    hitrate_rows,
    network_rows,
    object_rows,
    stats_rows,
    write_json,
    write_network_maps,
    write_rows,
)
from services.schemas import RunConfig
from services.synthdata import load_ground_truth
from services.training import dataset_fmri

log = logging.getLogger("avan.cli")

HELP = "score a trained checkpoint: hit rate, relational stats, brain networks or object interest"

METRICS = ["hitrate", "stats", "networks", "objects"]


def add_arguments(p) -> None:
    add_checkpoint(p)
    add_dataset(p)
    p.add_argument("--metric", choices=METRICS, required=True)
    p.add_argument("--mode", choices=["group", "individual", "both"], default="both",
                   help="attention mode for --metric hitrate")


def run(args, cfg: RunConfig) -> int:
    model, ckpt_cfg = load_model(args.checkpoint)
    run_cfg = pairing_config(ckpt_cfg, cfg)
    m = dataset(args, run_cfg)
    if m.n_voxels != model.n_voxels:
        raise ValidationError(f"checkpoint expects {model.n_voxels} voxels, dataset {m.root} has {m.n_voxels}")
    out = out_dir(args, cfg, "eval")

    if args.metric == "networks":
        fmri = dataset_fmri(m)
        nets = extract_networks(fmri_weights(model), cfg.z_threshold, fmri=fmri)
        match = None
        if m.ground_truth:
            truth = load_ground_truth(m)
            if truth.networks.maps:
                match = match_networks(nets, list(truth.networks.matrix))
                log.info("[networks] planted=%s recovered=%s best_corr=%s", len(truth.networks.maps),
                         match.recovered(0.6), [round(c, 3) for c in match.best_corr])
                write_json(out / "network_match.json", {
                    "best": match.best, "best_corr": match.best_corr,
                    "recovered_at_0.6": match.recovered(0.6), "flagged": match.flagged})
        rows = network_rows(nets, match)
        write_rows(out / "networks.csv", NETWORK_COLUMNS, rows)
        coords = read_brain_mask(m.root / m.brain_mask) if m.brain_mask else None
        write_network_maps(out / "network_maps.csv", nets, coords)
        maybe_xlsx(cfg, out, {"networks": rows})
        print(out / "networks.csv")
        return 0

    samples, _ = build_samples(m, run_cfg)
    train_set, test_set = split_samples(samples, run_cfg.train_fraction)

    if args.metric == "hitrate":
        modes = ["group", "individual"] if args.mode == "both" else [args.mode]
        reports = [evaluate_hit_rate(model, part, run_cfg, split=name, mode=mode)
                   for mode in modes for name, part in (("train", train_set), ("test", test_set)) if part]
        rows = hitrate_rows(reports)
        write_rows(out / "hitrate.csv", HITRATE_COLUMNS, rows)
        write_json(out / "missed_frames.json",
                   {f"{r.mode}/{r.split}": r.missed_frames for r in reports})
        maybe_xlsx(cfg, out, {"hitrate": rows})
        print(out / "hitrate.csv")
        return 0

    if args.metric == "stats":
        table = stats_table(relational_stats(model, train_set, run_cfg.batch_size, split="train"),
                            relational_stats(model, test_set, run_cfg.batch_size, split="test"))
        rows = stats_rows(table)
        write_rows(out / "stats.csv", STATS_COLUMNS, rows)
        maybe_xlsx(cfg, out, {"stats": rows})
        print(out / "stats.csv")
        return 0

    # objects
    truth = load_ground_truth(m)
    if not test_set:
        raise ValidationError("test split is empty")
    interest = evaluate_object_interest(model, test_set, truth.world, run_cfg.batch_size)
    moving = [o.moving for o in truth.world.objects]
    rows = object_rows(interest, moving)
    write_rows(out / "objects.csv", OBJECT_COLUMNS, rows)
    maybe_xlsx(cfg, out, {"objects": rows})
    log.info("[objects] frames=%s moving=%.3f stationary=%.3f background=%.3f",
             interest.frames, interest.moving, interest.stationary, interest.background)
    print(out / "objects.csv")
    return 0
