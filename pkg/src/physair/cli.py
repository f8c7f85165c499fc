"""Command-line entry point: simulate, train, predict, eval, attribute, gradcheck."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .attribution import build_records, export_report, render_record, token_labels
from .config import HELP, RunConfig, load_config, simulated_config
from .dataio import FeatureSpec, Normalizer, load_network, load_series
from .errors import NumericError, PhysAirError, StabilityError
from .geometry import StationNetwork
from .gradcheck import run_gradcheck
from .model import build_model
from .pipeline import prepare
from .simulator import preset as make_preset
from .simulator import simulate, write_outputs
from .training import (
    evaluate,
    format_report,
    metrics_report,
    model_from_checkpoint,
    read_checkpoint,
    save_checkpoint,
    train,
    write_history,
)

log = logging.getLogger("physair")
COMMANDS = ("simulate", "train", "predict", "eval", "attribute", "gradcheck")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="physair",
        description="Physics-guided interpretable air-quality forecasting.",
        epilog=HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="run-config JSON")
        sp.add_argument("--threads", type=int, default=1, help="torch CPU threads (1 = bit-reproducible)")
        sp.add_argument("--out", help="output directory (overrides paths.output_dir)")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("simulate", help="generate a synthetic dataset", epilog=HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    common(sp, config_required=False)
    sp.add_argument("--preset", help="line3 | grid9 | rotating_wind9")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--hours", type=int)

    sp = sub.add_parser("train", help="train and write checkpoint.json/history.csv")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--init-only", action="store_true", help="write the untrained initial checkpoint")

    sp = sub.add_parser("predict", help="write forecast.csv")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))

    sp = sub.add_parser("eval", help="write metrics.json")
    common(sp)
    sp.add_argument("--checkpoint", required=True, action="append", help="repeat for several horizons")
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))

    sp = sub.add_parser("attribute", help="write attribution.json and SVG figures")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.add_argument("--window", type=int, default=-1, help="window index within the split (figures)")
    sp.add_argument("--count", type=int, default=1, help="number of windows recorded in the JSON")

    sp = sub.add_parser("gradcheck", help="finite-difference gradient certification")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("-v", "--verbose", action="store_true")
    return p


# --------------------------------------------------------------------------- helpers


def _resolve(cfg_path, value):
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() or cfg_path is None else Path(cfg_path).parent / p


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else _resolve(args.config, cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(args, cfg: RunConfig, normalizer=None):
    if not cfg.stations or not cfg.series:
        raise PhysAirError("config needs paths.stations and paths.series")
    network = load_network(_resolve(args.config, cfg.stations))
    frame = load_series(_resolve(args.config, cfg.series), cfg.features, network)
    data = prepare(
        frame,
        cfg.features,
        cfg.L,
        cfg.H,
        cfg.P,
        fractions=cfg.fractions,
        stride=cfg.stride,
        eval_stride=cfg.eval_stride,
        transport=cfg.transport,
        per_station_wind=cfg.per_station_wind,
        normalizer=normalizer,
    )
    return network, frame, data


def _checkpoint_model(path):
    body = read_checkpoint(path)
    meta = body["meta"]
    net = meta["network"]
    network = StationNetwork(net["station_ids"], np.asarray(net["latlon"]), names=net.get("names", ()))
    return model_from_checkpoint(body, network), meta, network


def _check_network(a: StationNetwork, b: StationNetwork):
    if a.station_ids != b.station_ids:
        raise PhysAirError("checkpoint stations differ from the configured stations file")


# --------------------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config) if args.config else None
    sim = dict(cfg.simulator) if cfg else {}
    name = args.preset or sim.get("preset")
    if not name:
        raise PhysAirError("simulate needs --preset or simulator.preset in the config")
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    hours = args.hours if args.hours is not None else int(sim.get("hours", 4000))
    out = Path(args.out) if args.out else (_resolve(args.config, cfg.output_dir) if cfg else Path("out"))
    scenario = make_preset(name, seed=seed)
    result = simulate(scenario, hours)
    write_outputs(scenario, result, out)
    H = cfg.H if cfg else 24
    with open(out / "run_config.json", "w") as fh:
        json.dump(simulated_config(out, name, hours, seed, H), fh, indent=2)
    print(f"wrote {out / 'stations.csv'}, {out / 'series.csv'}, {out / 'truth.json'}, {out / 'run_config.json'}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    network, _, data = _load_data(args, cfg)
    seed = args.seed if args.seed is not None else cfg.train.seed
    model = build_model(cfg.model_config(network.S), network, seed=seed)
    history = []
    diverged = False
    if not args.init_only:
        tc = cfg.train if args.seed is None else type(cfg.train)(**{**cfg.train.to_dict(), "seed": seed})
        result = train(model, data.batches["train"], data.batches["val"], tc)
        history = result.history
        diverged = result.diverged
        if diverged:
            log.error("training diverged; saved the best checkpoint seen")
    meta = {
        "config": cfg.raw,
        "seed": seed,
        "network": {
            "station_ids": list(network.station_ids),
            "names": list(network.names),
            "latlon": network.latlon.tolist(),
        },
        "features": [f.to_dict() for f in data.specs],
        "normalizer": data.normalizer.to_dict(),
    }
    save_checkpoint(out / "checkpoint.json", model, meta)
    write_history(history, out / "history.csv")
    print(f"wrote {out / 'checkpoint.json'} ({len(history)} epochs)")
    return 2 if diverged else 0


def _prepared_for(args, cfg, meta):
    norm = Normalizer.from_dict(meta["normalizer"])
    return _load_data(args, cfg, normalizer=norm)


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    model, meta, ck_net = _checkpoint_model(args.checkpoint)
    network, frame, data = _prepared_for(args, cfg, meta)
    _check_network(ck_net, network)
    samples = data.samples[args.split]
    batch = data.batches[args.split]
    if batch is None:
        raise PhysAirError(f"no windows in the {args.split} split")
    with torch.no_grad():
        y_hat = model.predict(batch).y_hat.numpy()
    tgt = data.target
    y_hat = data.normalizer.invert_feature(y_hat, tgt)
    y = data.normalizer.invert_feature(batch.y.numpy(), tgt)
    with open(out / "forecast.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "station_id", "horizon_hour", "yhat", "y_if_known"])
        for k, sample in enumerate(samples):
            for s, sid in enumerate(network.station_ids):
                for h in range(cfg.H):
                    ts = (sample.t0 + np.timedelta64(h + 1, "h")).astype("datetime64[h]")
                    known = "" if np.isnan(y[k, s, h]) else repr(float(y[k, s, h]))
                    w.writerow([f"{ts}:00:00Z", sid, h + 1, repr(float(y_hat[k, s, h])), known])
    print(f"wrote {out / 'forecast.csv'} ({len(samples)} windows)")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    per_horizon = {}
    for path in args.checkpoint:
        model, meta, ck_net = _checkpoint_model(path)
        feats = [FeatureSpec(**f) for f in meta["features"]]
        mcfg = model.config
        cfg_h = RunConfig(**{**cfg.__dict__, "features": feats, "model": {**cfg.model, "H": mcfg.H, "L": mcfg.L, "P": mcfg.P}})
        network, _, data = _prepared_for(args, cfg_h, meta)
        _check_network(ck_net, network)
        batch = data.batches[args.split]
        if batch is None:
            raise PhysAirError(f"no windows in the {args.split} split")
        per_horizon[mcfg.H] = evaluate(model, batch, data.normalizer, data.target, horizon=mcfg.H)
    report = metrics_report(per_horizon)
    report["split"] = args.split
    with open(out / "metrics.json", "w") as fh:
        json.dump(report, fh, indent=2)
    print(format_report(report))
    return 0


def cmd_attribute(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    model, meta, ck_net = _checkpoint_model(args.checkpoint)
    network, frame, data = _prepared_for(args, cfg, meta)
    _check_network(ck_net, network)
    samples = data.samples[args.split]
    if not samples:
        raise PhysAirError(f"no windows in the {args.split} split")
    first = args.window if args.window >= 0 else len(samples) + args.window
    if not 0 <= first < len(samples):
        raise PhysAirError(f"window {args.window} outside the {len(samples)} {args.split} windows")
    idx = list(range(first, min(first + max(args.count, 1), len(samples))))
    batch = data.batches[args.split].subset(idx)
    with torch.no_grad():
        bundle = model.predict(batch)
    labels = token_labels(model.token_meta, [f.name for f in data.specs], model.config.L, model.config.P)
    u = None if batch.u_hat is None else batch.u_hat.numpy()
    v = None if batch.v is None else batch.v.numpy()
    records = []
    for b, k in enumerate(idx):
        records.extend(build_records(bundle, b, network.station_ids, labels, str(samples[k].t0), u, v))
    model_meta = {"model_config": model.config.to_dict(), "code_version": __version__, "checkpoint": str(args.checkpoint)}
    export_report(records, out, model_meta, figures=False)
    for r in records[: network.S]:
        render_record(r, out)
    print(f"wrote {out / 'attribution.json'} ({len(records)} records) and figures for window {first}")
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(args.seed)
    print(report.format())
    return 0 if report.passed else 2


HANDLERS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "attribute": cmd_attribute,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"commands: {', '.join(COMMANDS)}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    torch.set_num_threads(max(1, args.threads))
    try:
        return HANDLERS[args.command](args)
    except (NumericError, StabilityError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except PhysAirError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
