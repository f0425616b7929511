"""Command-line entry points: run, pretrain, finetune, generate, rank, report."""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .backbones import load_model, save_checkpoint
from .datasets import Dataset, split, write_dataset, znormalize
from .evaluation import ResultsMatrix, average_rank, emit_report, rank_table_csv
from .generators import GENERATOR_KINDS, make_generator, save_generator
from .pipeline import (
    DatasetSpec,
    build_model,
    contrast_config,
    evaluate_test,
    fine_tune,
    load_config_file,
    load_records,
    pretrain,
    run_grid,
    select_checkpoint,
)
from .pretrainers import PTM_KINDS
from .training import OptimConfig


def _dataset_spec(args):
    if os.path.exists(args.dataset):
        return DatasetSpec(path=args.dataset)
    return DatasetSpec(name=args.dataset, n=args.n_samples, length=args.length, noise=args.noise, seed=args.data_seed)


def _load_split(args):
    dataset = _dataset_spec(args).load()
    dataset.X = znormalize(dataset.X)
    return dataset, split(dataset, args.seed)


def _add_dataset_args(p):
    p.add_argument("--dataset", default="three-class-waves", help="dataset file/directory or built-in synthetic name")
    p.add_argument("--n-samples", type=int, default=300, help="size of a synthetic dataset")
    p.add_argument("--length", type=int, default=64, help="series length of a synthetic dataset")
    p.add_argument("--noise", type=float, default=0.3, help="noise std of a synthetic dataset")
    p.add_argument("--data-seed", type=int, default=0, help="seed of a synthetic dataset")
    p.add_argument("--seed", type=int, default=0, help="split / training seed")


def _widths(text):
    return {"widths": tuple(int(w) for w in text.split(","))} if text else {}


def cmd_run(args):
    configs = load_config_file(args.config)
    records = run_grid(configs, args.out, workers=args.workers)
    for rec in records:
        acc = "failed" if rec.test_accuracy is None else f"{rec.test_accuracy:.4f}"
        print(f"{rec.method}\t{rec.dataset}\tseed={rec.config['seed']}\t{acc}")
    return 0 if all(r.status == "complete" for r in records) else 1


def cmd_pretrain(args):
    dataset, bundle = _load_split(args)
    rng = np.random.default_rng(args.seed)
    model = build_model(args.backbone, args.ptm, dataset.n_channels, rng, _widths(args.widths))
    data = bundle.pretrain.X
    if args.generator != "ng":
        gen = make_generator(args.generator, **_gen_params(args)).fit(data)
        data = znormalize(gen.sample(args.n_gen or len(data), rng))
    losses = pretrain(model, data, args.ptm, contrast_config({}), OptimConfig(lr=args.lr), args.epochs, args.batch_size, rng)
    model.set_per_timestep(False)
    save_checkpoint(args.out, model, {"ptm": args.ptm, "generator": args.generator, "losses": losses})
    print(f"pretrained {args.ptm} for {args.epochs} epochs, final loss {losses[-1]:.4f} -> {args.out}")
    return 0


def cmd_finetune(args):
    dataset, bundle = _load_split(args)
    rng = np.random.default_rng(args.seed)
    if args.checkpoint:
        model, _ = load_model(args.checkpoint)
    else:
        model = build_model(args.backbone, None, dataset.n_channels, rng, _widths(args.widths))
    classes = np.unique(bundle.train.y)
    model.set_classes(len(classes), rng=rng)
    result = fine_tune(
        model, bundle.train, bundle.validation, classes, OptimConfig(lr=args.lr), args.epochs, args.batch_size,
        args.val_every, rng,
    )
    best = select_checkpoint([c["val_accuracy"] for c in result.checkpoints])
    model.load_state_dict(result.states[best - 1])
    acc = evaluate_test(model, bundle.test, classes)
    summary = {"checkpoints": result.checkpoints, "selected_checkpoint": best, "test_accuracy": acc}
    if args.out:
        save_checkpoint(args.out, model, summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _gen_params(args):
    if args.generator in ("gan", "vae", "diff"):
        return {"epochs": args.gen_epochs, "random_state": args.seed}
    return {}


def cmd_generate(args):
    args.generator = args.kind
    dataset, bundle = _load_split(args)
    gen = make_generator(args.kind, **_gen_params(args)).fit(bundle.pretrain.X)
    X = gen.sample(args.n, np.random.default_rng(args.seed))
    out = Dataset(X, None, name=f"{dataset.name}-{args.kind}")
    write_dataset(out, args.out, "jsonl")
    if args.checkpoint:
        save_generator(args.checkpoint, gen)
    print(f"wrote {args.n} {args.kind} series of shape {X.shape[1:]} -> {args.out}")
    return 0


def _rank_table(args):
    records = load_records(args.records)
    if not records:
        raise SystemExit(f"no completed records under {args.records}")
    return average_rank(ResultsMatrix.from_records(records), archive=args.archive), records


def cmd_rank(args):
    table, _ = _rank_table(args)
    text = rank_table_csv(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "rank_table.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_report(args):
    table, records = _rank_table(args)
    for name in emit_report(table, records, args.out):
        print(os.path.join(args.out, name))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="genpretrain", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every experiment of a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="results")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)

    for name, func in (("pretrain", cmd_pretrain), ("finetune", cmd_finetune)):
        p = sub.add_parser(name, help=f"{name} a backbone on a dataset split")
        _add_dataset_args(p)
        p.add_argument("--backbone", choices=("resnet", "transformer"), default="resnet")
        p.add_argument("--widths", default="", help="comma-separated ResNet block widths")
        p.add_argument("--epochs", type=int, default=400)
        p.add_argument("--batch-size", type=int, default=64)
        p.add_argument("--lr", type=float, default=1e-3)
        p.set_defaults(func=func)
        if name == "pretrain":
            p.add_argument("--ptm", choices=PTM_KINDS, required=True)
            p.add_argument("--generator", choices=("ng",) + GENERATOR_KINDS, default="ng")
            p.add_argument("--n-gen", type=int, default=None)
            p.add_argument("--gen-epochs", type=int, default=100)
            p.add_argument("--out", required=True, help="checkpoint path (.npz)")
        else:
            p.add_argument("--checkpoint", help="pretrained checkpoint to start from")
            p.add_argument("--val-every", type=int, default=10)
            p.add_argument("--out", help="where to save the selected checkpoint (.npz)")

    p = sub.add_parser("generate", help="fit a generator on a pretraining split and sample")
    _add_dataset_args(p)
    p.add_argument("--kind", choices=GENERATOR_KINDS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--gen-epochs", type=int, default=100)
    p.add_argument("--out", required=True, help="output JSON-lines dataset file")
    p.add_argument("--checkpoint", help="also save the fitted generator (.npz)")
    p.set_defaults(func=cmd_generate)

    for name, func in (("rank", cmd_rank), ("report", cmd_report)):
        p = sub.add_parser(name, help="average-rank table" if name == "rank" else "summary, rank CSV and scatter CSV")
        p.add_argument("--records", required=True, help="run output directory or its records/ folder")
        p.add_argument("--out", required=(name == "report"))
        p.add_argument("--archive", default="")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
