"""``milmix`` command line: synth, run, analyze, train, augment, print-defaults.

Exit codes: 0 success, 1 invalid input (config, data), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, harness
from .augment import augment_epoch, feature_stds
from .config import ConfigError, defaults, load_config
from .core import ANALYSIS, AUGMENT, RngStream, make_splits
from .io import FeatureFileError, ManifestError, save_dataset
from .model import ModelConfig, save_checkpoint
from .train import DivergenceError, accuracy, train_one, write_loss_curve

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _summary_line(data) -> str:
    counts = np.bincount(data.hard_labels(), minlength=data.C)
    per_class = ", ".join(f"{n}={c}" for n, c in zip(data.class_names, counts))
    sizes = [b.P for b in data.bags]
    return f"{len(data)} bags ({per_class}); P in [{min(sizes)}, {max(sizes)}]; D={data.D}"


def cmd_synth(cfg, out_dir) -> Path:
    data = harness.resolve_dataset(cfg.synthetic_spec())
    mp = save_dataset(data, out_dir)
    print(f"wrote {mp}: {_summary_line(data)}")
    return mp


def cmd_run(cfg, results_path, summary_path=None, jobs: int = 1) -> list[harness.ExperimentResult]:
    spec = cfg.experiment_spec()
    results_path = Path(results_path)
    summary_path = Path(summary_path) if summary_path else results_path.with_suffix(".summary.csv")
    done = harness.read_results(results_path)
    if done:
        print(f"resuming: {len(done)} records already in {results_path}")
    results_path.parent.mkdir(parents=True, exist_ok=True)
    with open(results_path, "a") as sink:

        def emit(rec):
            sink.write(json.dumps(rec, sort_keys=True) + "\n")
            sink.flush()

        results = harness.run_experiment(spec, jobs=jobs, on_result=emit, completed=done)
    summary_path.write_text(harness.summary_csv(results))
    for res in results:
        print(f"{res.cell_id:40s} {res.mean:.4f} +- {res.std:.4f} (n={res.n})")
    return results


def cmd_analyze(cfg, out_path, raw_dir=None, n=None) -> dict:
    data = harness.resolve_dataset(cfg.dataset_source())
    a = cfg.raw["analysis"]
    n = int(a["n_pairs"] if n is None else n)
    out = analysis.analyze(data, n, RngStream(cfg.seed, ANALYSIS), mode=a["mode"])
    Path(out_path).write_text(analysis.summary_rows_csv(out))
    if raw_dir is not None:
        raw_dir = Path(raw_dir)
        raw_dir.mkdir(parents=True, exist_ok=True)
        for idx, (cat, s) in enumerate(out.items()):
            if isinstance(s, analysis.DistanceSummary):
                pairs = analysis.sample_pairs(data, cat, n, RngStream(cfg.seed, ANALYSIS).child(idx), a["mode"])
                np.savetxt(raw_dir / f"{cat}.txt", pairs.distances(), fmt="%.17g")
    for cat, s in out.items():
        if isinstance(s, analysis.DistanceSummary):
            print(f"{cat:28s} n={s.n_pairs} mean={s.mean:.4f} median={s.median:.4f}")
        else:
            print(f"{cat:28s} error: {s}")
    return out


def cmd_train(cfg, out_dir):
    """One model on the train side of split 0; writes loss curve and checkpoint."""
    data = harness.resolve_dataset(cfg.dataset_source())
    e = cfg.raw["experiment"]
    plan = make_splits(data, 1, float(e["train_fraction"]), cfg.seed, bool(e["stratified"]))[0]
    tr, te = data.subset(plan.train_indices), data.subset(plan.test_indices)
    mcfg = ModelConfig(D=data.D, C=data.C, **cfg.model_options()).with_preset(cfg.preset())
    net, curve = train_one(tr, cfg.train_config(), mcfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_loss_curve(curve, out_dir / "loss_curve.csv")
    save_checkpoint(net, out_dir / "model.milc", seed=cfg.seed)
    acc_tr, acc_te = accuracy(net, tr), accuracy(net, te)
    print(f"final loss {curve[-1]:.6f}; train accuracy {acc_tr:.4f}; test accuracy {acc_te:.4f}")
    return net, curve, acc_te


def cmd_augment(cfg, out_dir, epoch: int = 0):
    """Apply the configured augmentation once (as for ``epoch``) and save the result."""
    data = harness.resolve_dataset(cfg.dataset_source())
    aug = cfg.augment()
    stds = feature_stds(data) if aug.kind == "gaussian_noise" else None
    view = augment_epoch(data, aug, RngStream(cfg.seed, AUGMENT).child(epoch), stds)
    mp = save_dataset(view, out_dir)
    doc = json.loads(mp.read_text())
    for entry, lab in zip(doc["entries"], view.labels):
        entry["probs"] = lab.probs.tolist()
    mp.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote {mp} ({aug.label}): {_summary_line(view)}")
    return view


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="milmix", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", "-c", help="JSON config file (defaults are used for missing keys)")
        sp.add_argument("--seed", type=int, help="root seed, overrides the config and MILMIX_SEED")

    sp = sub.add_parser("synth", help="write a synthetic dataset (manifest + feature files)")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("run", help="run the repeated-split experiment grid")
    common(sp)
    sp.add_argument("--results", required=True, help="JSON-lines results file (appended, resumable)")
    sp.add_argument("--summary", help="summary CSV (default: <results stem>.summary.csv)")
    sp.add_argument("--jobs", type=int, default=harness.default_jobs(), help="worker processes")

    sp = sub.add_parser("analyze", help="descriptor-distance statistics for the five pair categories")
    common(sp)
    sp.add_argument("--out", required=True, help="summary CSV path")
    sp.add_argument("--raw-dir", help="also dump raw distances, one file per category")
    sp.add_argument("--n", type=int, help="pairs per category (overrides analysis.n_pairs)")

    sp = sub.add_parser("train", help="train one model and write its loss curve")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("augment", help="apply the configured augmentation once and save the bags")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--epoch", type=int, default=0)

    sub.add_parser("print-defaults", help="print the full default config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "print-defaults":
        print(json.dumps(defaults(), indent=2))
        return EXIT_OK
    try:
        cfg = load_config(args.config, args.seed)
        if args.command == "synth":
            cmd_synth(cfg, args.out)
        elif args.command == "run":
            cmd_run(cfg, args.results, args.summary, max(1, args.jobs))
        elif args.command == "analyze":
            cmd_analyze(cfg, args.out, args.raw_dir, args.n)
        elif args.command == "train":
            cmd_train(cfg, args.out)
        elif args.command == "augment":
            cmd_augment(cfg, args.out, args.epoch)
    except (ConfigError, ManifestError, FeatureFileError, FileNotFoundError, ValueError) as exc:
        print(f"milmix: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, RuntimeError, OSError) as exc:
        print(f"milmix: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
