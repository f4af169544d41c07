"""Command-line entry point wiring the pipeline end to end.

Subcommands: generate, train, eval, analyze, inspect. Every run writes a
manifest into its output directory recording the resolved configuration,
seed, tool version, wall clock, and content digests of inputs and outputs;
downstream steps verify the recorded digests of the files they consume.

Exit codes: 0 success, 1 runtime/precondition failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .datagen import FamilySpec, generate_family
from .dataset import Dataset, concat_datasets
from .errors import IntegrityError, NumericalError, SaturationError
from .evaluation import EvalReport, export_analysis, pose_errors, worst_case_analysis
from .seeding import substream
from .neuralnet import AdamWState
from .training import (
    TrainConfig,
    load_checkpoint,
    prepare_arrays,
    save_checkpoint,
    train,
)
from .mpnn import build_model

THREADS_ENV = "ARMIK_THREADS"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, subcommand: str, config: dict, seed, inputs, outputs, t0: float) -> Path:
    """Record the resolved run in out_dir/manifest.json.

    Outputs are keyed by path relative to the manifest so the directory stays
    verifiable after being moved or copied; inputs keep the paths the run was
    invoked with.
    """
    out_dir = Path(out_dir)
    manifest = {
        "tool": "armik",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {str(Path(p).relative_to(out_dir)): _sha256(Path(p)) for p in outputs},
        "wall_clock_s": time.perf_counter() - t0,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verify_inputs(paths) -> None:
    """Check consumed files against the digests in their directory's manifest."""
    by_dir: dict[Path, list[Path]] = {}
    for p in paths:
        p = Path(p)
        by_dir.setdefault(p.parent, []).append(p)
    for directory, files in by_dir.items():
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            continue
        recorded = json.loads(manifest_path.read_text(encoding="utf-8")).get("outputs", {})
        for f in files:
            digest = recorded.get(f.name)
            if digest is None:
                continue
            actual = _sha256(f)
            if actual != digest:
                raise IntegrityError(f"{f}: content digest {actual} does not match manifest {digest}")


def _parse_variant(text: str) -> tuple[str, str]:
    parts = text.upper().split("-")
    if len(parts) != 2 or parts[0] not in ("DE", "RG") or parts[1] not in ("N", "F"):
        raise ValueError(f"variant must look like de-n, de-f, rg-n, or rg-f; got {text!r}")
    return parts[0], parts[1]


def _split_files(data_dir: Path, split: str) -> list[Path]:
    splits = json.loads((data_dir / "splits.json").read_text(encoding="utf-8"))
    if split == "train":
        names = splits["train"]
    elif split == "test":
        names = [splits["test"]]
    elif split == "validation":
        names = splits["validation"]
    else:
        raise ValueError(f"unknown split {split!r}")
    return [data_dir / splits["files"][n] for n in names]


def cmd_generate(args) -> int:
    t0 = time.perf_counter()
    spec = FamilySpec(
        dof=args.dof, n_configs=args.configs, samples_per_config=args.samples, seed=args.seed
    )
    out = Path(args.out)
    result = generate_family(
        spec,
        out_dir=out,
        val_configs=args.val_configs,
        val_samples=args.val_samples,
        threads=args.threads,
    )
    outputs = [out / "splits.json"]
    for name in result.datasets:
        outputs += [out / f"{name}.dat", out / f"{name}.json"]
    write_manifest(
        out,
        "generate",
        {
            "dof": args.dof,
            "configs": args.configs,
            "samples": args.samples,
            "val_configs": args.val_configs,
            "val_samples": args.val_samples,
            "threads": args.threads,
            "out": str(out),
        },
        args.seed,
        inputs=[],
        outputs=outputs,
        t0=t0,
    )
    print(f"generated {spec.total_samples + args.val_samples} samples for dof={spec.dof} into {out}")
    return 0


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    mode, connectivity = _parse_variant(args.variant)
    data_dir = Path(args.data)
    train_files = _split_files(data_dir, "train")
    test_files = _split_files(data_dir, "test")
    verify_inputs(train_files + test_files)
    train_sets = [Dataset.load(p) for p in train_files]
    test_sets = [Dataset.load(p) for p in test_files]
    for ds in train_sets + test_sets:
        if ds.dof != args.dof:
            raise ValueError(f"dataset dof {ds.dof} does not match requested dof {args.dof}")

    config = TrainConfig(
        mode=mode,
        connectivity=connectivity,
        dof=args.dof,
        hidden_layers=args.layers,
        hidden_units=args.neurons,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ref_rng = substream(args.seed, "reference-angles")
    data = prepare_arrays(train_sets, mode, connectivity, ref_rng)
    test_ref = substream(args.seed, "reference-angles-test")
    test_data = prepare_arrays(test_sets, mode, connectivity, test_ref)

    outputs = []
    for run in range(args.runs):
        run_dir = out if args.runs == 1 else out / f"run_{run:02d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        run_seed = args.seed if args.runs == 1 else int(substream(args.seed, f"run-{run}").integers(0, 2**63))
        run_config = config if args.runs == 1 else dataclasses.replace(config, seed=run_seed)
        model = build_model(mode, connectivity, args.dof, args.layers, args.neurons, substream(run_seed, "init"))
        opt = AdamWState(lr=args.lr)
        model, report = train(model, data, run_config, test_data, opt=opt)
        ckpt_path = run_dir / f"{model.name}.ckpt.json"
        save_checkpoint(
            ckpt_path,
            model,
            opt,
            manifest={
                "variant": model.name,
                "seed": run_seed,
                "best_epoch": report.best_epoch,
                "stopping_epoch": report.stopping_epoch,
                "data": str(data_dir),
            },
        )
        curve_path = run_dir / "report.csv"
        report.save_curve(curve_path)
        summary_path = run_dir / "report.json"
        summary_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        outputs += [ckpt_path, curve_path, summary_path]
        print(
            f"{model.name}: stopped at epoch {report.stopping_epoch} (best {report.best_epoch}), "
            f"test loss {report.test_loss:.6g}, test R2 {report.test_r2:.6g}"
        )
    write_manifest(
        out,
        "train",
        {
            "variant": args.variant,
            "dof": args.dof,
            "layers": args.layers,
            "neurons": args.neurons,
            "lr": args.lr,
            "batch_size": args.batch_size,
            "epochs": args.epochs,
            "patience": args.patience,
            "runs": args.runs,
            "data": str(data_dir),
            "out": str(out),
        },
        args.seed,
        inputs=train_files + test_files,
        outputs=outputs,
        t0=t0,
    )
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    ckpt_path = Path(args.ckpt)
    data_dir = Path(args.data)
    files = _split_files(data_dir, args.split)
    verify_inputs([ckpt_path] + files)
    model, _, ckpt_manifest = load_checkpoint(ckpt_path)
    seed = args.seed if args.seed is not None else int(ckpt_manifest.get("seed", 0))
    sets = [Dataset.load(p) for p in files]
    for ds in sets:
        if ds.dof != model.dof:
            raise ValueError(f"dataset dof {ds.dof} does not match checkpoint dof {model.dof}")
    ds = sets[0] if len(sets) == 1 else concat_datasets(sets)
    report = pose_errors(model, ds, args.split, seed=seed)
    out = Path(args.out)
    report_path, samples_path = report.save(out)
    agg = report.aggregates()
    write_manifest(
        out,
        "eval",
        {"ckpt": str(ckpt_path), "data": str(data_dir), "split": args.split, "out": str(out)},
        seed,
        inputs=[ckpt_path] + files,
        outputs=[report_path, samples_path],
        t0=t0,
    )
    print(
        f"{model.name} on {args.split}: R2 {agg['r2']:.6g}, "
        f"position {agg['position_error_mean']:.3g}+-{agg['position_error_std']:.3g} cm, "
        f"orientation {agg['orientation_error_mean']:.3g}+-{agg['orientation_error_std']:.3g} deg"
    )
    return 0


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    report_path = Path(args.report)
    verify_inputs([report_path, report_path.parent / "samples.csv"])
    report = EvalReport.load(report_path)
    extract = worst_case_analysis(report, args.fraction)
    out = Path(args.out)
    written = export_analysis(extract, out, every=args.every)
    write_manifest(
        out,
        "analyze",
        {"report": str(report_path), "fraction": args.fraction, "every": args.every, "out": str(out)},
        None,
        inputs=[report_path],
        outputs=written,
        t0=t0,
    )
    print(f"analyzed worst {extract.size} samples ({args.fraction:.0%}) into {out}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.suffix == ".dat":
        ds = Dataset.load(path)
        print(f"dataset {path}")
        print(f"  rows: {ds.n_rows}")
        print(f"  columns: {len(ds.columns)}")
        for key in ("dof", "config", "role", "seed", "reach_cm"):
            if key in ds.meta:
                print(f"  {key}: {ds.meta[key]}")
        return 0
    if path.name.endswith(".ckpt.json"):
        model, opt, manifest = load_checkpoint(path)
        print(f"checkpoint {path}")
        print(f"  variant: {model.name}")
        print(f"  parameters: {model.n_params}")
        print(f"  node features: {model.node_dim}")
        print(f"  optimizer step: {opt.step if opt else 'absent'}")
        for key, value in sorted(manifest.items()):
            print(f"  {key}: {value}")
        return 0
    if path.name == "manifest.json" or path.suffix == ".json":
        print(path.read_text(encoding="utf-8"), end="")
        return 0
    raise ValueError(f"do not know how to inspect {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="armik",
        description="Learned inverse kinematics for manipulator families: data generation, training, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"armik {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    default_threads = int(os.environ.get(THREADS_ENV, "1"))

    p = sub.add_parser("generate", help="generate a manipulator family and its datasets")
    p.add_argument("--dof", type=int, choices=(3, 5, 6), required=True)
    p.add_argument("--configs", type=int, required=True, help="number of link-length configurations")
    p.add_argument("--samples", type=int, required=True, help="samples per configuration")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-configs", type=int, default=1)
    p.add_argument("--val-samples", type=int, default=10_000)
    p.add_argument("--threads", type=int, default=default_threads)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one network variant on a generated family")
    p.add_argument("--variant", required=True, help="de-n, de-f, rg-n, or rg-f")
    p.add_argument("--dof", type=int, choices=(3, 5, 6), required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--neurons", type=int, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--batch-size", type=int, default=5000)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--runs", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("validation", "test"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="worst-case analysis of an evaluation report")
    p.add_argument("--report", required=True)
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.add_argument("--every", type=int, default=1, help="keep every n-th scatter row")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("inspect", help="print dataset or checkpoint metadata")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error[invalid-argument]: {exc}", file=sys.stderr)
        return 1
    except SaturationError as exc:
        print(f"error[saturation]: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return 1
    except IntegrityError as exc:
        print(f"error[integrity]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
