"""Command-line workflow: prepare, train, sample, eval, ablate.

All randomness flows from one --seed (or the config's seeds.seed) through
fixed stream ids per phase, so every artifact is reproducible from its
manifest. Exit codes: 0 success, 2 validation/input error, 3 numerical
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import (
    Dataset,
    load_dataset,
    load_idx,
    mixture_sample,
    mnist_prepare,
    save_dataset,
)
from .dynamics import (
    IntegratorConfig,
    equilibrium_sample,
    load_samples,
    reverse_sample,
    save_samples,
)
from .errors import (
    IdxFormatError,
    IntegrationBlowupError,
    ScheduleFormatError,
    TrainingDivergedError,
    ValidationError,
)
from .evaluate import (
    ablation_run,
    energy_grid,
    fidelity_score,
    image_sheet,
    marginal_histogram,
    mode_weights,
    save_energy_grid,
    save_marginal,
    save_mode_report,
)
from .learning import train_schedule
from .rng import (
    STREAM_DATA,
    STREAM_EVAL,
    STREAM_SAMPLE,
    STREAM_TRAIN,
    NoiseSource,
)
from .schedule import load_schedule, save_schedule

_STREAMS = {"data": STREAM_DATA, "train": STREAM_TRAIN,
            "sample": STREAM_SAMPLE, "eval": STREAM_EVAL}


def _load_config(path) -> dict:
    if path is None:
        return cfgmod.resolve_config({})
    return cfgmod.load_run_config(path)


def _seed_of(args, cfg: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(cfg["seeds"]["seed"])


def _write_manifest(out_file_or_dir, cfg: dict, seed: int, argv, outputs) -> None:
    p = Path(out_file_or_dir)
    manifest = p / "run.json" if p.is_dir() else p.with_name(p.name + ".run.json")
    cfgmod.echo_config(cfg, manifest, extra={
        "command": list(argv),
        "seed": seed,
        "streams": _STREAMS,
        "outputs": [str(o) for o in outputs],
    })


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ValidationError(f"expected a comma-separated integer list, got '{text}'") from None


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ValidationError(f"expected a comma-separated number list, got '{text}'") from None


def _cmd_prepare(args, argv) -> int:
    cfg = _load_config(args.config if args.config else (args.mixture or None))
    seed = _seed_of(args, cfg)
    out = Path(args.out)
    if args.mixture is not None:
        spec = cfgmod.mixture_from_config(cfg["mixture"])
        ds = mixture_sample(spec, args.m, NoiseSource(seed, STREAM_DATA))
    else:
        if not (args.mnist_images and args.mnist_labels):
            raise ValidationError("prepare needs either --mixture or --mnist-images/--mnist-labels")
        sec = dict(cfg["mnist"])
        if args.classes is not None:
            sec["classes"] = _parse_int_list(args.classes)
        if args.side is not None:
            sec["out_side"] = args.side
        if args.no_binarize:
            sec["binarize"] = False
        cfg["mnist"] = sec
        mapping = cfgmod.mapping_from_config(sec)
        ds = mnist_prepare(load_idx(args.mnist_images), load_idx(args.mnist_labels),
                           classes=sec["classes"], out_side=sec["out_side"],
                           mapping=mapping, binarize_pixels=sec["binarize"],
                           threshold=sec["threshold"])
    save_dataset(ds, out)
    _write_manifest(out, cfg, seed, argv, [out])
    print(f"wrote {ds.n_samples} samples of dimension {ds.dim} to {out}")
    return 0


def _cmd_train(args, argv) -> int:
    cfg = _load_config(args.config)
    seed = _seed_of(args, cfg)
    ds = load_dataset(args.data)
    topo = cfgmod.topology_from_config(cfg["topology"])
    rule = (args.rule or cfg["train"]["rule"]).replace("-", "_")
    tcfg = cfgmod.train_config_from(cfg["train"], seed)
    cd1sec = dict(cfg["train"]["cd1"])
    if args.delta is not None:
        cd1sec["delta"] = args.delta
    if args.n_noise is not None:
        cd1sec["n_noise"] = args.n_noise
    cfg["train"]["cd1"] = cd1sec
    cd1cfg = cfgmod.cd1_config_from(cd1sec) if rule == "cd1" else None
    out = Path(args.out)
    log_path = out.with_name(out.name + ".log.csv")
    sched = train_schedule(ds, topo, tcfg, rule=rule, cd1cfg=cd1cfg,
                           noise=NoiseSource(seed, STREAM_TRAIN), log_path=log_path)
    save_schedule(sched, out)
    _write_manifest(out, cfg, seed, argv, [out, log_path])
    print(f"trained {tcfg.n_times} snapshots ({rule}) -> {out}")
    return 0


def _cmd_sample(args, argv) -> int:
    cfg = _load_config(args.config)
    seed = _seed_of(args, cfg)
    sched = load_schedule(args.schedule)
    tau = sched.grid.tau
    kbt = args.kbt if args.kbt is not None else sched.kbt
    isec = dict(cfg["integrate"])
    if args.dt is not None:
        isec["dt"] = args.dt
    cfg["integrate"] = isec
    icfg = cfgmod.integrator_from_config(isec, tau, kbt)
    out = Path(args.out)
    meta = {
        "seed": seed,
        "stream": STREAM_SAMPLE,
        "dt": icfg.dt,
        "kbt": kbt,
        "tau": tau,
        "schedule": str(args.schedule),
        "schedule_sha256": _sha256_file(args.schedule),
    }
    if args.equilibrium:
        total_time = args.total_time if args.total_time is not None else tau * args.chains
        stride = args.stride if args.stride is not None else tau
        params0 = sched.params_at(0.0)
        traj = equilibrium_sample(params0, sched.topology, icfg, total_time,
                                  NoiseSource(seed, STREAM_SAMPLE), stride_time=stride)
        samples = traj
        meta.update({"mode": "equilibrium", "total_time": total_time, "stride_time": stride})
    else:
        samples = reverse_sample(sched, icfg, NoiseSource(seed, STREAM_SAMPLE), args.chains)
        meta.update({"mode": "reverse_sde", "chains": args.chains})
    save_samples(out, samples, metadata=meta)
    _write_manifest(out, cfg, seed, argv, [out])
    print(f"wrote {samples.shape[0]} samples to {out}")
    return 0


def _cmd_eval(args, argv) -> int:
    cfg = _load_config(args.config if args.config else (args.mixture or None))
    seed = _seed_of(args, cfg)
    samples = load_samples(args.samples)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    esec = cfg["eval"]
    outputs = []
    notes = {}

    if args.mixture is not None:
        spec = cfgmod.mixture_from_config(cfg["mixture"])
        report = mode_weights(samples, spec, sampler_tag=args.tag)
        save_mode_report(report, out_dir / "mode_report.csv")
        outputs.append(out_dir / "mode_report.csv")
        for axis in (0, 1):
            h = marginal_histogram(samples, axis, bins=esec["bins"], spec=spec)
            save_marginal(h, out_dir / f"marginal_x{axis}.csv")
            outputs.append(out_dir / f"marginal_x{axis}.csv")
        notes["mode_max_error"] = report.max_error
    elif args.train_data is None:
        raise ValidationError("eval needs --mixture or --train-data as the reference")

    if args.schedule is not None:
        sched = load_schedule(args.schedule)
        if sched.topology.n_oscillators == 2:
            lo, hi, res = esec["grid_lo"], esec["grid_hi"], esec["grid_resolution"]
            grid = energy_grid(sched, t=0.0, ranges=((lo, hi), (lo, hi)), resolution=res)
            save_energy_grid(grid, out_dir / "energy_grid.txt", which="energy")
            save_energy_grid(grid, out_dir / "density_grid.txt", which="density")
            outputs += [out_dir / "energy_grid.txt", out_dir / "density_grid.txt"]
            notes["log_z"] = grid.log_z
        else:
            notes["energy_grid"] = (
                f"skipped: landscape export supports N=2, schedule has "
                f"N={sched.topology.n_oscillators}")

    if args.train_data is not None:
        train_ds = load_dataset(args.train_data)
        side = int(round(train_ds.dim ** 0.5))
        if side * side == train_ds.dim:
            mapping = cfgmod.mapping_from_config(cfg["mnist"])
            image_sheet(samples, (side, side), out_dir / "samples_sheet.pgm", mapping)
            outputs.append(out_dir / "samples_sheet.pgm")
            if train_ds.labels is not None:
                rep = fidelity_score(samples, train_ds, mapping)
                notes["fidelity"] = {
                    "assignment_rate": rep.assignment_rate,
                    "mean_nn_distance": rep.mean_nn_distance,
                    "threshold": rep.threshold,
                    "score": rep.score,
                    "class_counts": rep.class_counts,
                }
        else:
            notes["image_sheet"] = f"skipped: dimension {train_ds.dim} is not a square"

    with open(out_dir / "eval_report.json", "w", encoding="utf-8") as fh:
        json.dump(notes, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(out_dir / "eval_report.json")
    _write_manifest(out_dir, cfg, seed, argv, outputs)
    print(f"eval artifacts in {out_dir}")
    return 0


def _cmd_ablate(args, argv) -> int:
    cfg = _load_config(args.config)
    seed = _seed_of(args, cfg)
    ds = load_dataset(args.data)
    tsec = cfg["topology"]
    if tsec["kind"] != "grid" or tsec["rows"] is None or tsec["cols"] is None:
        raise ValidationError("ablate needs a grid topology (rows/cols) in the config")
    grid_shape = (int(tsec["rows"]), int(tsec["cols"]))
    ranges = _parse_float_list(args.ranges)
    tcfg = cfgmod.train_config_from(cfg["train"], seed)
    rule = (args.rule or cfg["train"]["rule"]).replace("-", "_")
    mapping = cfgmod.mapping_from_config(cfg["mnist"])
    out_dir = Path(args.out)
    report = ablation_run(ds, grid_shape, ranges, tcfg, dt=cfg["integrate"]["dt"],
                          n_eval_samples=args.samples, rule=rule, seed=seed,
                          metric=tsec["metric"], out_dir=out_dir, mapping=mapping)
    _write_manifest(out_dir, cfg, seed, argv, [out_dir / "ablation.csv"])
    for row in report.rows:
        print(f"range {row.coupling_range:g}: edges={row.n_edges} "
              f"rate={row.assignment_rate:.3f} nn={row.mean_nn_distance:.4f} "
              f"score={row.score:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oscsgm",
                                description="Oscillator-network score-based generative modeling")
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("prepare", help="build a dataset from a mixture spec or IDX files")
    sp.add_argument("--mixture", metavar="CONFIG", help="run config whose mixture section to sample")
    sp.add_argument("--m", type=int, default=10000, help="mixture sample count")
    sp.add_argument("--mnist-images", help="IDX images file")
    sp.add_argument("--mnist-labels", help="IDX labels file")
    sp.add_argument("--classes", help="comma-separated class labels to keep (default 0,1)")
    sp.add_argument("--side", type=int, help="downsampled side length (default 12)")
    sp.add_argument("--no-binarize", action="store_true", help="keep grayscale displacements")
    sp.add_argument("--config", help="run config (mnist section defaults)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_prepare)

    st = sub.add_parser("train", help="learn a driving protocol from a dataset")
    st.add_argument("--data", required=True)
    st.add_argument("--config", help="run config (topology/train sections)")
    st.add_argument("--rule", choices=["force-matching", "cd1"])
    st.add_argument("--delta", type=float, help="CD1 step length")
    st.add_argument("--n-noise", type=int, help="CD1 noise realizations per point")
    st.add_argument("--seed", type=int)
    st.add_argument("--out", required=True, help="schedule file to write")
    st.set_defaults(func=_cmd_train)

    ss = sub.add_parser("sample", help="draw samples from a trained schedule")
    ss.add_argument("--schedule", required=True)
    ss.add_argument("--chains", type=int, default=1000)
    ss.add_argument("--dt", type=float)
    ss.add_argument("--kbt", type=float)
    ss.add_argument("--equilibrium", action="store_true",
                    help="static Langevin baseline instead of the reverse SDE")
    ss.add_argument("--total-time", type=float, help="equilibrium mode: total physical time")
    ss.add_argument("--stride", type=float, help="equilibrium mode: time between records")
    ss.add_argument("--config", help="run config (integrate/train sections)")
    ss.add_argument("--seed", type=int)
    ss.add_argument("--out", required=True)
    ss.set_defaults(func=_cmd_sample)

    se = sub.add_parser("eval", help="score samples against a reference")
    se.add_argument("--samples", required=True)
    se.add_argument("--mixture", metavar="CONFIG", help="mixture reference (run config)")
    se.add_argument("--train-data", help="training dataset reference (image tasks)")
    se.add_argument("--schedule", help="schedule for the landscape export")
    se.add_argument("--config", help="run config (eval section)")
    se.add_argument("--tag", default="SGM", help="sampler tag for the mode report")
    se.add_argument("--seed", type=int)
    se.add_argument("--out", required=True, help="output directory")
    se.set_defaults(func=_cmd_eval)

    sa = sub.add_parser("ablate", help="coupling-range sweep on an image task")
    sa.add_argument("--config", required=True)
    sa.add_argument("--data", required=True)
    sa.add_argument("--ranges", default="6,5,4,3,2,1")
    sa.add_argument("--samples", type=int, default=200, help="generated samples per range")
    sa.add_argument("--rule", choices=["force-matching", "cd1"])
    sa.add_argument("--seed", type=int)
    sa.add_argument("--out", required=True, help="output directory")
    sa.set_defaults(func=_cmd_ablate)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (ValidationError, ScheduleFormatError, IdxFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IntegrationBlowupError, TrainingDivergedError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
