"""Command line entry point.

One binary, six subcommands: simulate, gen-dataset, train, eval,
compare, plots. Exit codes: 0 success, 2 invalid arguments, 3 data
error, 4 numerical failure.

Only the standard library is imported at module scope; numpy loads
lazily inside the command handlers so that --threads can pin the BLAS
worker count through environment variables first.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from .config import (
    build_config,
    load_config_file,
    parse_overrides,
    run_provenance,
    write_run_json,
)
from .errors import DataError, NumericalError

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be >= 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _merged_raw(args) -> dict[str, str]:
    raw = load_config_file(args.config) if args.config else {}
    raw.update(parse_overrides(args.set))
    return raw


def _conveniences(args, names: tuple[str, ...]) -> dict[str, str]:
    """Dedicated flags (e.g. --seed) expressed as config overrides."""
    out = {}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            out[name] = str(value)
    return out


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    from .data import MicMask, SampleRecord, write_record
    from .modal import RoomSpec, synthesize_field
    from .plots import save_field_images
    import json

    import numpy as np

    started = time.time()
    lx, ly, lz = args.room
    plane_z = args.plane_z if args.plane_z is not None else lz / 2
    room = RoomSpec(
        lx=lx, ly=ly, lz=lz, t60=args.t60, source=tuple(args.source),
        z_plane=plane_z, grid_w=args.grid[0], grid_h=args.grid[1],
    )
    freqs = sorted(set(args.freq))
    field = synthesize_field(room, freqs, f_cutoff=args.cutoff,
                             room_id="simulated")
    mask = MicMask(
        mask=np.ones((room.grid_w, room.grid_h), dtype=np.uint8),
        observed=[(w, h) for w in range(room.grid_w)
                  for h in range(room.grid_h)],
    )
    record = SampleRecord(room=room, field=field, mask=mask, seed=args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record_path = out / "room_00000.mdf"
    write_record(record_path, record)
    meta = {
        "format": "MDF1",
        "freqs": [float(f) for f in freqs],
        "records": ["room_00000.mdf"],
        "room": {"lx": lx, "ly": ly, "lz": lz, "t60": args.t60,
                 "source": list(args.source), "z_plane": plane_z},
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    images = []
    for f in freqs:
        images += [str(p) for p in save_field_images(field, f, out)]

    cfg = {"room": [lx, ly, lz], "t60": args.t60, "source": list(args.source),
           "plane_z": plane_z, "grid": list(args.grid), "freqs": freqs,
           "cutoff": args.cutoff}
    write_run_json(out, run_provenance("simulate", cfg, args.seed, started,
                                       extra={"images": images}))
    print(f"wrote {record_path} and {len(images)} image(s) to {out}")
    return 0


# ------------------------------------------------------------- gen-dataset


def cmd_gen_dataset(args) -> int:
    from .data import GenConfig, write_dataset

    started = time.time()
    raw = _merged_raw(args)
    raw.update(_conveniences(args, ("n_rooms", "seed")))
    for required in ("n_rooms", "seed"):
        if required not in raw:
            raise ValueError(
                f"gen-dataset needs {required!r} (config file, --set, or flag)")
    cfg = build_config(GenConfig, raw)
    out = write_dataset(cfg, args.out, force=args.force,
                        progress=_progress(args, cfg.n_rooms))
    write_run_json(out, run_provenance("gen-dataset", cfg, cfg.seed, started))
    print(f"wrote {cfg.n_rooms} records to {out}")
    return 0


def _progress(args, total: int):
    if total < 20 or args.quiet:
        return None

    def report(i: int, n: int) -> None:
        if (i + 1) % max(1, n // 10) == 0:
            print(f"  {i + 1}/{n} records", flush=True)

    return report


# ------------------------------------------------------------------ train


def cmd_train(args) -> int:
    from .cvnn.training import TrainConfig, train
    from .cvnn.unet import UNet, UNetSpec
    from .data import Dataset
    from .plots import save_loss_curves

    started = time.time()
    ds = Dataset.open(args.dataset)
    raw = _merged_raw(args)
    raw.update(_conveniences(
        args, ("lr", "batch_size", "max_epochs", "patience", "seed")))
    if "mic_choices" not in raw:
        raw["mic_choices"] = ",".join(str(m) for m in ds.config.mic_choices)
    tc = build_config(TrainConfig, raw)

    encoder = tuple(int(s) for s in args.encoder.split(","))
    spec = UNetSpec(k_freqs=len(ds.freqs), encoder_filters=encoder)
    model = UNet(spec, seed=tc.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def report(stats) -> None:
        if args.quiet:
            return
        if stats.epoch % args.log_every == 0 or stats.epoch == 1:
            print(f"  epoch {stats.epoch}: train {stats.train_loss:.6g} "
                  f"val {stats.val_loss:.6g}", flush=True)

    history = train(model, ds.load_train(), ds.load_val(), tc,
                    checkpoint_dir=out, resume_from=args.resume,
                    on_epoch=report)
    history.write_csv(out / "history.csv")
    rows = [(e.epoch, e.train_loss, e.val_loss) for e in history.epochs]
    save_loss_curves(rows, out)
    write_run_json(out, run_provenance(
        "train", tc, tc.seed, started,
        extra={
            "dataset": str(Path(args.dataset).resolve()),
            "encoder_filters": list(encoder),
            "param_count": model.param_count(),
            "epochs_run": len(history.epochs),
            "best_val": history.best_val,
            "stop_reason": history.stop_reason,
        }))
    print(f"stopped after {len(history.epochs)} epochs "
          f"({history.stop_reason}); best val {history.best_val:.6g}")
    return 0


# ------------------------------------------------------- method assembly


def _resolve_methods(names: str, checkpoint, lam: float):
    from .cvnn.training import model_from_checkpoint
    from .metrics import cvnn_method, kernel_method

    methods = []
    for name in [n.strip() for n in names.split(",") if n.strip()]:
        if name == "kernel":
            methods.append(("kernel", kernel_method(lam)))
        elif name == "cvnn":
            if checkpoint is None:
                raise ValueError("method 'cvnn' needs --checkpoint")
            model = model_from_checkpoint(checkpoint)
            methods.append(("cvnn", cvnn_method(model)))
        else:
            raise ValueError(f"unknown method {name!r} (kernel, cvnn)")
    if not methods:
        raise ValueError("no methods requested")
    return methods


def _split_records(ds, split: str):
    if split == "train":
        return ds.load_train()
    if split == "val":
        return ds.load_val()
    if split == "all":
        return ds.load_train() + ds.load_val()
    raise ValueError(f"unknown split {split!r} (train, val, all)")


def _records_by_t60(records, levels):
    groups: dict[float, list] = {}
    for rec in records:
        level = min(levels, key=lambda t: abs(t - rec.room.t60))
        groups.setdefault(level, []).append(rec)
    return groups


# ------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    from .data import Dataset
    from .metrics import sweep_mics, write_csv

    started = time.time()
    ds = Dataset.open(args.dataset)
    records = _split_records(ds, args.split)
    if not records:
        raise DataError(f"split {args.split!r} of {args.dataset} is empty")
    mics = (tuple(int(s) for s in args.mics.split(","))
            if args.mics else ds.config.mic_choices)
    ((name, method),) = _resolve_methods(args.method, args.checkpoint,
                                         args.lam)

    reports = sweep_mics(method, records, mics)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "eval.csv", reports, method=name)
    for rep in reports:
        print(f"  m={rep.sweep_key}: nmse_complex {rep.mean_complex_db:.2f} dB, "
              f"nmse_abs {rep.mean_abs_db:.2f} dB over {rep.n_rooms} rooms")
    write_run_json(out, run_provenance(
        "eval", {"method": name, "mics": list(mics), "lam": args.lam,
                 "split": args.split}, ds.config.seed, started,
        extra={"dataset": str(Path(args.dataset).resolve())}))
    print(f"wrote {out / 'eval.csv'}")
    return 0


# ---------------------------------------------------------------- compare


def cmd_compare(args) -> int:
    from .data import Dataset
    from .metrics import append_csv_rows, sweep_mics, sweep_t60, write_rows_csv
    from .plots import save_sweep_curves, save_sweep_summary

    started = time.time()
    ds = Dataset.open(args.dataset)
    records = _split_records(ds, args.split)
    if not records:
        raise DataError(f"split {args.split!r} of {args.dataset} is empty")
    methods = _resolve_methods(args.methods, args.checkpoint, args.lam)
    mics = (tuple(int(s) for s in args.mics.split(","))
            if args.mics else ds.config.mic_choices)
    fixed_m = args.fixed_m if args.fixed_m is not None else max(mics)
    with_method = len(methods) > 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.sweep in ("mics", "both"):
        rows: list[dict] = []
        for name, method in methods:
            reports = sweep_mics(method, records, mics)
            append_csv_rows(rows, reports, method=name if with_method else None)
        write_rows_csv(out / "compare_mics.csv", rows, with_method)
        save_sweep_curves(rows, out, stem="mics")
        save_sweep_summary(rows, out, stem="mics_summary")
        written.append("compare_mics.csv")
    if args.sweep in ("t60", "both"):
        groups = _records_by_t60(records, ds.config.t60_choices)
        rows = []
        for name, method in methods:
            reports = sweep_t60(method, groups, fixed_m)
            append_csv_rows(rows, reports, method=name if with_method else None)
        write_rows_csv(out / "compare_t60.csv", rows, with_method)
        save_sweep_curves(rows, out, stem="t60")
        save_sweep_summary(rows, out, stem="t60_summary")
        written.append("compare_t60.csv")

    write_run_json(out, run_provenance(
        "compare",
        {"methods": [n for n, _ in methods], "sweep": args.sweep,
         "mics": list(mics), "fixed_m": fixed_m, "lam": args.lam,
         "split": args.split},
        ds.config.seed, started,
        extra={"dataset": str(Path(args.dataset).resolve())}))
    print(f"wrote {', '.join(written)} and figures to {out}")
    return 0


# ------------------------------------------------------------------ plots


def cmd_plots(args) -> int:
    from .metrics import read_csv
    from .plots import save_loss_curves, save_sweep_curves, save_sweep_summary

    started = time.time()
    if not args.csv and not args.history:
        raise ValueError("plots needs at least one --csv or --history input")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    made: list[str] = []
    if args.csv:
        rows: list[dict] = []
        for path in args.csv:
            rows.extend(read_csv(path))
        made += [p.name for p in save_sweep_curves(rows, out, stem=args.stem)]
        made += [p.name for p in
                 save_sweep_summary(rows, out, stem=f"{args.stem}_summary")]
    if args.history:
        hist = []
        with open(args.history) as fh:
            header = fh.readline()
            if header.strip() != "epoch,train_loss,val_loss":
                raise DataError(f"{args.history} is not a history CSV")
            for line in fh:
                epoch, tr, va = line.strip().split(",")
                hist.append((int(epoch), float(tr), float(va)))
        if not hist:
            raise DataError(f"{args.history} has no epochs")
        made += [p.name for p in save_loss_curves(hist, out)]
    write_run_json(out, run_provenance(
        "plots", {"csv": list(args.csv or ()), "history": args.history},
        None, started, extra={"figures": made}))
    print(f"wrote {len(made)} figure file(s) to {out}")
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP worker threads")
    common.add_argument("--quiet", action="store_true",
                        help="suppress progress output")

    cfg = argparse.ArgumentParser(add_help=False)
    cfg.add_argument("--config", default=None,
                     help="key = value config file")
    cfg.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config key (repeatable)")

    parser = argparse.ArgumentParser(
        prog="rtfrecon",
        description="Simulate modal room transfer functions and reconstruct "
                    "sound fields from sparse microphones.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="synthesize one room's field and render images")
    p.add_argument("--room", type=float, nargs=3, required=True,
                   metavar=("LX", "LY", "LZ"), help="room dimensions [m]")
    p.add_argument("--t60", type=float, required=True,
                   help="reverberation time [s]")
    p.add_argument("--source", type=float, nargs=3, required=True,
                   metavar=("X", "Y", "Z"), help="source position [m]")
    p.add_argument("--freq", type=float, action="append", required=True,
                   help="frequency to synthesize [Hz] (repeatable)")
    p.add_argument("--plane-z", type=float, default=None,
                   help="receiver plane height (default Lz/2)")
    p.add_argument("--grid", type=int, nargs=2, default=(32, 32),
                   metavar=("W", "H"))
    p.add_argument("--cutoff", type=float, default=400.0,
                   help="modal cutoff frequency [Hz]")
    p.add_argument("--seed", type=int, default=0,
                   help="seed recorded in the output record")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-dataset", parents=[common, cfg],
                       help="generate a dataset of simulated rooms")
    p.add_argument("--n-rooms", dest="n_rooms", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", parents=[common, cfg],
                       help="train the complex U-Net on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--encoder", default="128,256,512,1024",
                   help="encoder channel widths, comma separated")
    p.add_argument("--resume", default=None,
                   help="checkpoint to resume from")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate one method across microphone counts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", default="kernel", help="kernel or cvnn")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--lam", type=float, default=0.01,
                   help="kernel ridge regularization")
    p.add_argument("--mics", default=None,
                   help="mic counts, comma separated (default: dataset's)")
    p.add_argument("--split", default="val", choices=("train", "val", "all"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", parents=[common],
                       help="sweep methods over mic counts and T60 levels")
    p.add_argument("--dataset", required=True)
    p.add_argument("--methods", default="kernel",
                   help="comma separated: kernel,cvnn")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--lam", type=float, default=0.01)
    p.add_argument("--sweep", default="both", choices=("mics", "t60", "both"))
    p.add_argument("--mics", default=None,
                   help="mic counts, comma separated (default: dataset's)")
    p.add_argument("--fixed-m", dest="fixed_m", type=int, default=None,
                   help="mic count for the T60 sweep (default: max)")
    p.add_argument("--split", default="val", choices=("train", "val", "all"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plots", parents=[common],
                       help="render figures from metric or history CSVs")
    p.add_argument("--csv", action="append", default=None,
                   help="metrics CSV from eval/compare (repeatable)")
    p.add_argument("--history", default=None,
                   help="history.csv from train")
    p.add_argument("--stem", default="sweep",
                   help="output filename stem for sweep figures")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plots)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args.threads)
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
