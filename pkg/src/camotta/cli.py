"""Command-line interface: data generation, degradation, training, adaptation,
evaluation, reporting, and the property-verification suite.

Exit codes: 0 success, 2 usage error (argparse), 1 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import data as D
from . import metrics as mx
from . import pipeline as pl
from . import verification as V
from .model import Model, ModelState, NetworkConfig, init_model
from .tensor import AdamW, ContractError, DomainError

log = logging.getLogger("camotta")


def _network_config(cfg):
    m = cfg["model"]
    return NetworkConfig(resolution=m["resolution"], base=m["base"],
                         embed=m["embed"], depth=m["depth"], heads=m["heads"],
                         patch=m["patch"], keep_fraction=m["keep_fraction"])


def _load_run_config(args):
    cfg = C.load_config(getattr(args, "config", None))
    if getattr(args, "print_config", False):
        print(C.format_config(cfg), end="")
        raise SystemExit(0)
    return cfg


def cmd_gen_data(args):
    cfg = _load_run_config(args)
    size = args.size or cfg["model"]["resolution"]
    for i in range(args.count):
        spec = D.SceneSpec(size=size, camouflage=args.camouflage,
                           seed=args.seed + i)
        image, mask = D.gen_scene(spec)
        D.save_sample(args.out, f"scene{i:04d}", image, mask)
    print(f"wrote {args.count} scenes to {args.out}")
    return 0


def cmd_degrade(args):
    src, dst = Path(getattr(args, "in")), Path(args.out)
    (dst / "images").mkdir(parents=True, exist_ok=True)
    (dst / "masks").mkdir(parents=True, exist_ok=True)
    n = 0
    for name, image, mask in D.load_dataset(src):
        out = D.degrade(image, args.kind, args.severity, seed=args.seed + n)
        D.save_sample(dst, name, out, mask)
        n += 1
    print(f"degraded {n} samples ({args.kind} severity {args.severity}) to {dst}")
    return 0


def cmd_train(args):
    cfg = _load_run_config(args)
    tr = cfg["train"]
    state = init_model(_network_config(cfg), seed=cfg["model"]["seed"])
    adapt_cfg = pl.AdaptationConfig.from_config(cfg)
    samples = [(img, gt) for _, img, gt in D.load_dataset(args.data)]
    optimizer = AdamW(state.parameters(), lr=tr["lr"],
                      weight_decay=tr["weight_decay"])
    rng = np.random.default_rng(tr["seed"])
    for step in range(tr["steps"]):
        idx = rng.choice(len(samples), size=min(tr["batch"], len(samples)),
                         replace=False)
        batch = [(D.contrast_jitter(img, tr["contrast_jitter"], rng), gt)
                 for img, gt in (samples[i] for i in idx)]
        report = pl.train_step(batch, state, optimizer, adapt_cfg,
                               seed=tr["seed"] + 100 * step)
        if step % 20 == 0 or step == tr["steps"] - 1:
            print(f"step {step}: total={report.total:.4f} dec={report.dec:.4f}")
    state.save(args.out_checkpoint)
    print(f"checkpoint written to {args.out_checkpoint}")
    return 0


def cmd_adapt(args):
    cfg = _load_run_config(args)
    state = ModelState.load(args.checkpoint)
    adapt_cfg = pl.AdaptationConfig.from_config(cfg)
    if args.iters is not None:
        adapt_cfg.iterations = args.iters
    records, skipped = pl.run_benchmark(
        args.data, state, args.mode, adapt_cfg, out_csv=args.out_csv,
        degradation=args.degradation, severity=args.severity, seed=args.seed,
        dump_dir=args.dump_maps)
    if records:
        mean_mae = float(np.mean([r.mae for r in records]))
        print(f"{args.mode}: {len(records)} samples, mean MAE {mean_mae:.4f}")
    if skipped:
        print(f"warning: {skipped} samples skipped", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args):
    preds = {p.stem: p for p in sorted(Path(args.pred_dir).iterdir())
             if p.suffix in (".png", ".pgm")}
    gts = {p.stem: p for p in sorted(Path(args.gt_dir).iterdir())
           if p.suffix in (".png", ".pgm")}
    matched = sorted(set(preds) & set(gts))
    if not matched:
        raise ContractError("no matched prediction/ground-truth pairs")
    records = []
    for stem in matched:
        pred = D.load_image(preds[stem])
        if pred.ndim == 3:
            pred = pred.mean(axis=0)
        gt = D.load_image(gts[stem])
        if gt.ndim == 3:
            gt = gt.mean(axis=0)
        vals = mx.evaluate_metrics(pred, (gt >= 128.0 / 255.0).astype(float))
        records.append(D.SampleRecord(stem, "eval", "none", 0, *vals.as_tuple()))
    pl.write_csv(records, args.out_csv)
    print(f"evaluated {len(records)} pairs -> {args.out_csv}")
    return 0


def cmd_report(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metric_names = ("s_measure", "e_measure", "wfbeta", "mae")
    summaries = []
    for path in args.csv:
        rows = [r for r in pl.read_csv(path) if r["sample"] != "mean"]
        if not rows:
            raise ContractError(f"no data rows in {path}")
        label = Path(path).stem
        means = {m: float(np.mean([float(r[m]) for r in rows])) for m in metric_names}
        summaries.append((label, rows[0]["mode"], means))

    header = f"{'run':20s} {'mode':8s} " + " ".join(f"{m:>10s}" for m in metric_names)
    lines = [header]
    for label, mode, means in summaries:
        lines.append(f"{label:20s} {mode:8s} "
                     + " ".join(f"{means[m]:10.4f}" for m in metric_names))
    table = "\n".join(lines)
    print(table)
    (out / "summary.txt").write_text(table + "\n")

    for m in metric_names:
        fig, ax = plt.subplots(figsize=(6, 4))
        labels = [label for label, _, _ in summaries]
        ax.bar(labels, [means[m] for _, _, means in summaries], color="#4878d0")
        ax.set_ylabel(m)
        ax.set_title(f"mean {m} per run")
        ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        fig.savefig(out / f"{m}.png", dpi=100)
        plt.close(fig)
    print(f"report written to {out}")
    return 0


def cmd_verify(args):
    results = V.run_property_suite(name_filter=args.filter, seed=args.seed,
                                   include_slow=not args.skip_slow)
    if not results:
        raise ContractError(f"no properties match filter {args.filter!r}")
    failures = 0
    for r in results:
        print(r.line())
        if not r.passed:
            failures += 1
            print(f"  reproduce: camotta verify --filter {r.name} --seed {r.seed}")
    print(f"{len(results) - failures}/{len(results)} properties passed")
    return 1 if failures else 0


def cmd_accept(args):
    results = V.run_acceptance(checkpoint=args.checkpoint,
                               allow_train=not args.no_train,
                               seed=args.seed, out_dir=args.out)
    failures = 0
    for r in results:
        print(r.line())
        if not r.passed:
            failures += 1
    print(f"{len(results) - failures}/{len(results)} criteria passed")
    return 1 if failures else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="camotta",
        description="Test-time adaptation for camouflaged-object segmentation "
                    "on synthetic desk-scale benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_opts(p):
        p.add_argument("--config", help="INI run-config file")
        p.add_argument("--print-config", action="store_true",
                       help="print the effective config and exit")

    p = sub.add_parser("gen-data", help="generate synthetic camouflage scenes")
    add_config_opts(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--camouflage", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("degrade", help="apply a degradation to a dataset")
    p.add_argument("--kind", choices=D.DEGRADATION_KINDS, required=True)
    p.add_argument("--severity", type=int, choices=range(1, 6), required=True)
    p.add_argument("--in", dest="in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="supervised training on a dataset")
    add_config_opts(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="run a benchmark under one inference mode")
    add_config_opts(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=pl.MODES, required=True)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--dump-maps", default=None,
                   help="directory for per-sample prediction maps")
    p.add_argument("--degradation", choices=("none",) + D.DEGRADATION_KINDS,
                   default="none")
    p.add_argument("--severity", type=int, choices=range(0, 6), default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="score saved prediction maps")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="summary table and bar plots from CSVs")
    p.add_argument("--csv", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("accept", help="run the acceptance experiment suite")
    p.add_argument("--checkpoint", default=None,
                   help="trained benchmark checkpoint; trains one when omitted")
    p.add_argument("--no-train", action="store_true",
                   help="fail instead of training when no checkpoint is given")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None,
                   help="directory for acceptance.txt and acceptance.csv")
    p.set_defaults(func=cmd_accept)

    p = sub.add_parser("verify", help="run the property-verification suite")
    p.add_argument("--filter", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-slow", action="store_true")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
