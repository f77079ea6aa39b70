"""Command-line entry point: ``hierpart <subcommand> [options]``."""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import data as D
from . import estimators, inference, oracles, sampling
from . import tensor as T
from .model import ESTIMATORS, Model, ModelConfig
from .train import OUT_DIR_ENV, Dataset, TrainConfig, check_compatible, evaluate_model, prepare, train

TAU_GRID = (0.001, 0.01, 0.1, 1.0, 10.0)
SAMPLE_GRID = (5, 10, 50, 100)


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
    return v


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {s}")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="hierpart", description="Weakly supervised two-level point cloud segmentation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset and manifest")
    g.add_argument("--family", choices=D.FAMILIES, default="chairs", help="object family (default: chairs)")
    g.add_argument("--train", type=int, default=200, help="number of training objects (default: 200)")
    g.add_argument("--test", type=int, default=50, help="number of test objects (default: 50)")
    g.add_argument("--points", type=_positive_int, default=D.DEFAULT_POINTS, help="points per object (default: 512)")
    g.add_argument("--seed", type=int, default=0, help="dataset seed (default: 0)")
    g.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="train a model on a manifest")
    t.add_argument("--data", required=True, help="manifest.jsonl written by gen-data")
    t.add_argument("--out", default=None, help=f"output directory (default: ${OUT_DIR_ENV})")
    t.add_argument("--estimator", choices=ESTIMATORS, default="mpl-ste", help="gradient estimator (default: mpl-ste)")
    t.add_argument("--latent-classes", type=_positive_int, default=8, help="number of latent sub-part classes C (default: 8)")
    t.add_argument("--samples", type=_positive_int, default=5, help=f"training samples L, swept over {SAMPLE_GRID} (default: 5)")
    t.add_argument("--tau", type=_positive_float, default=1.0, help=f"Gumbel-softmax temperature, swept over {TAU_GRID} (default: 1.0)")
    t.add_argument("--baseline", type=float, default=1.0, help="REINFORCE control variate B (default: 1.0)")
    t.add_argument("--no-baseline", action="store_true", help="disable the REINFORCE control variate")
    t.add_argument("--epochs", type=_positive_int, default=50, help="training epochs (default: 50)")
    t.add_argument("--batch-size", type=_positive_int, default=8, help="clouds per minibatch (default: 8)")
    t.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default: 1e-3)")
    t.add_argument("--seed", type=int, default=0, help="training seed (default: 0)")
    t.add_argument("--k-nn", type=_positive_int, default=16, help="neighbours in the k-NN graph (default: 16)")
    t.add_argument("--eval-mode", choices=inference.INFERENCE_MODES, default=None,
                   help="inference used for per-epoch metrics (default: mpl for mpl-ste, mc otherwise)")
    t.add_argument("--eval-samples", type=_positive_int, default=100, help="MC inference samples (default: 100)")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("--checkpoint", required=True, help="checkpoint file (hpk.v1)")
    e.add_argument("--data", required=True, help="manifest.jsonl")
    e.add_argument("--mode", choices=inference.INFERENCE_MODES, default=None, help="inference mode (default: mirrors the estimator)")
    e.add_argument("--samples", type=_positive_int, default=100, help="MC inference samples (default: 100)")
    e.add_argument("--repeats", type=_positive_int, default=10, help="MC repeats for mean/std (default: 10)")
    e.add_argument("--seed", type=int, default=0, help="sampling seed (default: 0)")
    e.add_argument("--latent-classes", type=_positive_int, default=None, help="expected C; mismatch is an error")
    e.add_argument("--metrics-out", default=None, help="append the record to this file")

    i = sub.add_parser("infer", help="predict labels for one cloud")
    i.add_argument("--checkpoint", required=True, help="checkpoint file (hpk.v1)")
    i.add_argument("--cloud", required=True, help="input cloud (ptc v1)")
    i.add_argument("--out", required=True, help="output label file (lbl v1)")
    i.add_argument("--mode", choices=inference.INFERENCE_MODES, default=None, help="inference mode (default: mirrors the estimator)")
    i.add_argument("--samples", type=_positive_int, default=100, help="MC inference samples (default: 100)")
    i.add_argument("--seed", type=int, default=0, help="sampling seed (default: 0)")

    x = sub.add_parser("export-colored", help="write a colored ASCII PLY of a cloud")
    x.add_argument("--cloud", required=True, help="input cloud (ptc v1)")
    x.add_argument("--labels", default=None, help="predicted labels (lbl v1); ground truth when omitted")
    x.add_argument("--level", choices=("top", "mid"), default="top", help="which level to color (default: top)")
    x.add_argument("--out", required=True, help="output .ply path")

    c = sub.add_parser("grad-check", help="finite-difference check of every loss on a tiny instance")
    c.add_argument("--seed", type=int, default=0, help="instance seed (default: 0)")
    c.add_argument("--tolerance", type=float, default=1e-5, help="max relative error (default: 1e-5)")

    o = sub.add_parser("oracle-check", help="run the estimator and sampler oracle suite")
    o.add_argument("--seed", type=int, default=0, help="suite seed (default: 0)")
    return p


def _cmd_gen_data(args):
    man = D.generate_dataset(args.out, args.family, args.train, args.test, args.seed, args.points)
    print(f"wrote {sum(man.counts.values())} clouds to {args.out} ({man.counts})")
    return 0


def _cmd_train(args):
    first = D.read_cloud(D.read_manifest(args.data).paths("train")[0])
    mcfg = ModelConfig(
        first.num_top, args.latent_classes, k_nn=args.k_nn, tau=args.tau, num_samples=args.samples,
        estimator=args.estimator, baseline=None if args.no_baseline else args.baseline,
    )  # fmt: skip
    out = args.out or os.environ.get(OUT_DIR_ENV)
    if not out:
        raise ValueError(f"no output directory: pass --out or set {OUT_DIR_ENV}")
    cfg = TrainConfig(
        mcfg, lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed, data=args.data,
        out_dir=out, eval_mode=args.eval_mode, eval_samples=args.eval_samples,
    )  # fmt: skip
    result = train(cfg)
    last = result.metrics[-1]
    print(json.dumps({k: last[k] for k in ("epoch", "train_loss", "top_oa", "mid_oa") if k in last}))
    return 0


def _cmd_eval(args):
    model, _ = Model.load(args.checkpoint)
    ds = Dataset.from_manifest(args.data, model.config.k_nn)
    check_compatible(model, ds, args.latent_classes)
    mode = args.mode or inference.default_mode(model.config.estimator)
    record = evaluate_model(model, ds.test, mode, args.samples, args.seed, args.repeats)
    line = json.dumps(record, sort_keys=True)
    print(line)
    if args.metrics_out:
        with open(args.metrics_out, "a") as fh:
            fh.write(line + "\n")
    return 0


def _cmd_infer(args):
    model, _ = Model.load(args.checkpoint)
    cloud = D.read_cloud(args.cloud)
    if cloud.num_top != model.config.num_top_classes:
        raise ValueError(f"cloud has {cloud.num_top} top classes, checkpoint {model.config.num_top_classes}")
    inst = prepare(cloud, model.config.k_nn)
    mode = args.mode or inference.default_mode(model.config.estimator)
    rng = np.random.default_rng(args.seed)
    _, top = inference.infer_top(model, inst.points, inst.graph, mode, args.samples, rng)
    mid = inference.infer_middle(model, inst.points, inst.graph)
    inference.write_labels(args.out, top, mid)
    print(f"wrote {len(top)} labels to {args.out}")
    return 0


def _cmd_export(args):
    cloud = D.read_cloud(args.cloud)
    if args.labels:
        top, mid = inference.read_labels(args.labels)
        if len(top) != len(cloud):
            raise ValueError(f"label file has {len(top)} rows, cloud has {len(cloud)} points")
    else:
        top, mid = cloud.top, cloud.mid
    D.export_colored(args.out, cloud.points, top if args.level == "top" else mid)
    print(f"wrote {args.out}")
    return 0


def _cmd_grad_check(args):
    inst = oracles.tiny_instance(args.seed)
    model, pts, graph, y = inst.model, inst.points, inst.graph, inst.labels
    noise = sampling.gumbel_noise((3, len(pts), model.config.num_latent_classes), np.random.default_rng(args.seed))
    # inference-mode normalisation: in training mode the biases feeding a
    # normalisation layer have an exactly zero gradient, which the relative
    # error cannot score
    checks = {
        "mpl-ste (decoder)": (lambda: estimators.mpl_ste_objective(model, pts, graph, y, training=False),
                              [p.name for p in model.decoder_parameters()]),
        "mc-pathwise": (lambda: estimators.pathwise_objective(model, pts, graph, y, 0.5, noise, training=False), None),
        "exact marginal": (lambda: estimators.exact_marginal_objective(model, pts, graph, y)[0], None),
    }  # fmt: skip
    ok = True
    for name, (fn, names) in checks.items():
        rep = T.finite_difference_check(fn, model.parameters(), names=names)
        passed = rep.max_error <= args.tolerance and not rep.unreliable
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: max relative error {rep.max_error:.2e}")
    return 0 if ok else 1


def _cmd_oracle_check(args):
    ok = True
    for name, passed, detail in oracles.run_suite(args.seed):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return 0 if ok else 1


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "export-colored": _cmd_export,
    "grad-check": _cmd_grad_check,
    "oracle-check": _cmd_oracle_check,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"hierpart {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
