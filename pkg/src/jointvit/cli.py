"""``jointvit`` command line: synth, train, eval, ablate, gradcheck.

Settings come from defaults, then ``--config`` JSON, then flags. Every run
archives its resolved config as ``<out>/config.json``. Failures print a
single ``error[<code>]: <message>`` line to stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import SaO2Class, balance_augment, write_image_folder
from .errors import ConfigError, ContractError, JointViTError
from .evaluation import (
    DEFAULT_LAMBDA_GRID, evaluate_params, fold_datasets, fold_seed, kfold_split, run_ablation,
    write_curve_csv, write_json, write_metrics_csv,
)
from .gradcheck import THRESHOLD, run_gradcheck
from .losses import LossVariant
from .model import init_params
from .training import LOG_HEADER, AdamW, TrainState, train, train_accuracy

logger = logging.getLogger("jointvit")


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--seed", type=int, help="protocol seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="image folder (or volume folder with --volumes) instead of synthetic data")
    data.add_argument("--volumes", action="store_true", help="treat --data as raw float32 volumes")
    data.add_argument("--fold", type=int, help="restrict to one cross-validation fold")
    data.add_argument("--k", type=int, help="number of folds")

    train_opts = argparse.ArgumentParser(add_help=False)
    train_opts.add_argument("--lambda", dest="lam", type=float, help="joint loss coefficient")
    train_opts.add_argument("--variant", choices=[v.value for v in LossVariant])
    train_opts.add_argument("--epochs", type=int)
    train_opts.add_argument("--max-steps", type=int)
    train_opts.add_argument("--batch-size", type=int)
    train_opts.add_argument("--no-balance", action="store_true", help="skip balancing augmentation")

    parser = argparse.ArgumentParser(prog="jointvit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic long-tailed dataset")
    p = sub.add_parser("train", parents=[common, data, train_opts], help="train and save a checkpoint")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p = sub.add_parser("eval", parents=[common, data], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("ablate", parents=[common, data, train_opts], help="lambda / loss-variant ablation")
    p.add_argument("--grid", type=_floats, help="comma-separated lambdas (default: 0.8,...,1.0)")
    p.add_argument("--variants", help="comma-separated loss variants (bce,bal_bce)")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check on a micro model")
    return parser


def resolve_config(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if args.config else RunConfig().to_dict()
    proto, loss, data = base["protocol"], base["loss"], base["data"]
    if args.seed is not None:
        proto["seed"] = args.seed
    if args.out is not None:
        base["output"] = args.out
    for attr, key in (("epochs", "epochs"), ("max_steps", "max_steps"), ("batch_size", "batch_size"),
                      ("fold", "fold"), ("k", "k")):
        if getattr(args, attr, None) is not None:
            proto[key] = getattr(args, attr)
    if getattr(args, "lam", None) is not None:
        loss["lam"] = args.lam
    if getattr(args, "variant", None) is not None:
        loss["variant"] = args.variant
    if getattr(args, "no_balance", False):
        data["balance"] = False
    if getattr(args, "data", None):
        data["source"] = "volumes" if args.volumes else "folder"
        data["path"] = args.data
    return RunConfig.from_dict(base)


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def _fold_split(cfg: RunConfig, dataset, balance: bool = True):
    """Training and test datasets for ``protocol.fold`` (or everything)."""
    p = cfg.protocol
    tcfg = cfg.train_config()
    tcfg.balance = tcfg.balance and balance
    if p.fold is None:
        return dataset, dataset, p.seed
    folds = kfold_split(dataset.ids, p.k, p.seed, dataset.labels)
    fd = fold_datasets(dataset, folds, p.fold, tcfg, p.seed)
    return fd.train, fd.test, fold_seed(p.seed, p.fold)


def cmd_synth(cfg: RunConfig) -> int:
    spec = cfg.data.synthetic
    if spec.image_size != cfg.model.image_size:
        raise ConfigError(f"synthetic image_size {spec.image_size} != model image_size {cfg.model.image_size}")
    out = _prepare_out(cfg)
    ds = cfg.load_dataset()
    write_image_folder(ds, out / "dataset")
    counts = ", ".join(f"{c.name}={ds.class_counts[c]}" for c in SaO2Class)
    print(f"wrote {len(ds)} instances to {out / 'dataset'} ({counts})")
    return 0


def cmd_train(cfg: RunConfig, resume: Optional[str] = None) -> int:
    out = _prepare_out(cfg)
    dataset = cfg.load_dataset()
    if len(dataset) == 0:
        raise ContractError("training dataset is empty")
    tcfg = cfg.train_config()
    train_set, _, seed = _fold_split(cfg, dataset)
    if tcfg.balance and cfg.protocol.fold is None:
        train_set = balance_augment(train_set, tcfg.policy, seed)

    if resume:
        ck = load_checkpoint(resume, expected_config=cfg.model)
        params = ck.params
        opt = AdamW(params, tcfg.optimizer)
        opt.t = ck.optimizer_t
        for n in params.names():
            if n in ck.optimizer_m:
                opt.m[n] = ck.optimizer_m[n].copy()
                opt.v[n] = ck.optimizer_v[n].copy()
        rng = np.random.default_rng(seed)
        if ck.rng_state is not None:
            rng.bit_generator.state = ck.rng_state
        state = TrainState(params, opt, rng, ck.step, ck.epoch)
    else:
        params = init_params(cfg.model, seed)
        state = TrainState(params, AdamW(params, tcfg.optimizer), np.random.default_rng(seed))
    meta = {"lambda": float(cfg.loss.lam), "variant": cfg.loss.variant.value}

    log_path = out / "train_log.csv"
    new_log = not log_path.exists()
    with open(log_path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_log:
            writer.writerow(LOG_HEADER)

        def on_step(row):
            writer.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])
            fh.flush()

        train(tcfg, train_set, state, on_step)

    save_checkpoint(state.params, meta, out / "checkpoint", step=state.step, epoch=state.epoch,
                    rng_state=state.rng.bit_generator.state, optimizer=state.optimizer)
    acc = train_accuracy(state.params, train_set)
    print(f"trained {state.step} steps; train accuracy {acc:.4f}; checkpoint {out / 'checkpoint'}")
    return 0


def cmd_eval(cfg: RunConfig, checkpoint: str) -> int:
    ck = load_checkpoint(checkpoint)
    if ck.config != cfg.model:
        cfg.model = ck.config
    dataset = cfg.load_dataset()
    if len(dataset) == 0:
        raise ContractError("evaluation dataset is empty")
    shape = dataset.image_shape()
    want = (ck.config.image_size, ck.config.image_size, ck.config.channels)
    if shape != want:
        raise ConfigError(f"dataset images {shape} do not match checkpoint input {want}")
    out = _prepare_out(cfg)
    _, test, _ = _fold_split(cfg, dataset, balance=False)
    fold = cfg.protocol.fold or 0
    report = evaluate_params(ck.params, test, fold_id=fold)
    lam = ck.meta.get("lambda", cfg.loss.lam)
    variant = ck.meta.get("variant", cfg.loss.variant.value)
    write_json(report.to_dict(), out / "metrics.json")
    write_metrics_csv([(fold, lam, variant, report.accuracy, report.macro_sensitivity,
                        report.macro_specificity)], out / "metrics.csv")
    print(f"accuracy={report.accuracy:.4f} sensitivity={report.macro_sensitivity:.4f} "
          f"specificity={report.macro_specificity:.4f} (n={len(test)})")
    return 0


def cmd_ablate(cfg: RunConfig, grid: Optional[List[float]], variants: Optional[str]) -> int:
    out = _prepare_out(cfg)
    dataset = cfg.load_dataset()
    grid = grid or list(DEFAULT_LAMBDA_GRID)
    vs = [LossVariant(v.strip()) for v in variants.split(",")] if variants else [cfg.loss.variant]
    results = run_ablation(dataset, cfg.train_config(), grid, vs, cfg.protocol.k, cfg.protocol.seed)
    rows = [row for r in results for row in r.rows()]
    write_metrics_csv(rows, out / "ablation.csv")
    write_curve_csv(results, out / "lambda_curve.csv")
    write_json([{"lambda": r.lam, "variant": r.variant, **r.summary} for r in results], out / "ablation.json")
    print(f"{'variant':8s} {'lambda':>6s}  {'accuracy':>15s}  {'sensitivity':>15s}  {'specificity':>15s}")
    for r in results:
        cells = "  ".join(f"{100 * r.summary[m]['mean']:6.2f}±{100 * r.summary[m]['std']:5.2f}%"
                          for m in ("accuracy", "sensitivity", "specificity"))
        print(f"{r.variant:8s} {r.lam:6.2f}  {cells}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    results = run_gradcheck(cfg.protocol.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"lambda={r.lam:g} max_rel_error={r.max_rel_error:.3e} worst={r.worst_tensor} "
              f"class_head_grad={r.class_head_grad:.3e} value_head_grad={r.value_head_grad:.3e} "
              f"{'ok' if r.passed else 'FAIL'}")
    if failed:
        r = failed[0]
        raise ContractError(f"gradient check failed at lambda={r.lam:g}: {r.worst_tensor} "
                            f"relative error {r.max_rel_error:.3e} (threshold {THRESHOLD:g})")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.resume)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.grid, args.variants)
        return cmd_gradcheck(cfg)
    except JointViTError as e:
        print(f"error[{e.code}]: {' '.join(str(e).split())}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error[io]: {' '.join(str(e).split())}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
