"""Command-line entry point: ``polycf {train,eval,recommend,diagnose}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .evaluation import evaluate, score_user, top_k
from .filters import response_curve, write_response_csv
from .interactions import Dataset, InteractionMatrix, load_dataset
from .lowpass import cached_truncated_svd
from .synthetic import random_interactions
from .training import train, split_validation, write_loss_log

log = logging.getLogger("polycf")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    for key in RunConfig.keys():
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        if key == "fast":
            parser.add_argument(*flags, dest=f"cfg_{key}", action="store_const", const="true", default=None)
        else:
            parser.add_argument(*flags, dest=f"cfg_{key}", default=None, metavar=key.upper())


def _resolve(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg.update_from_file(args.config)
    for key in RunConfig.keys():
        raw = getattr(args, f"cfg_{key}", None)
        if raw is not None:
            cfg.set(key, raw)
    return cfg


def _load(cfg: RunConfig) -> Dataset:
    train_path, test_path, name = cfg.resolve_paths()
    return load_dataset(train_path, test_path, name)


def _projector(cfg: RunConfig, R: InteractionMatrix, s: int, seed: int, omega: float):
    if s == 0 or omega == 0:
        return None
    cache = Path(cfg.cache_dir or cfg.output_dir) / "svd-cache"
    return cached_truncated_svd(R, s, seed, cache)


def _prepare_output(cfg: RunConfig, dataset: Dataset | None) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config").write_text(cfg.dumps(), encoding="utf-8")
    inputs = {"config_hash": cfg.content_hash()}
    if dataset is not None:
        inputs["dataset_hash"] = dataset.content_hash()
        inputs["files"] = dataset.source_hashes
    (out / "inputs.json").write_text(json.dumps(inputs, indent=2) + "\n", encoding="utf-8")
    return out


def cmd_train(cfg: RunConfig) -> int:
    dataset = _load(cfg)
    out = _prepare_output(cfg, dataset)
    spec = diagnostics.build_ablation(cfg.variant, cfg.filter_spec())
    validation = None
    fit_on = dataset
    if cfg.val_fraction > 0:
        fit_on, validation = split_validation(dataset, cfg.val_fraction, cfg.seed)
    projector = _projector(cfg, fit_on.train, spec.cutoff, spec.svd_seed, spec.omega)
    result = train(fit_on, cfg.train_config(), spec, projector, validation)
    ckpt = Checkpoint.from_filter(result.filter, spec.cutoff, spec.svd_seed, dataset.content_hash())
    save_checkpoint(out / "checkpoint.json", ckpt)
    write_loss_log(out / "loss_log.csv", result.log)
    print(f"wrote {out / 'checkpoint.json'} ({len(result.log)} epochs)")
    return EXIT_OK


def _checkpoint_filter(cfg: RunConfig, ckpt_path: str, dataset: Dataset):
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.dataset_hash != dataset.content_hash():
        log.warning("checkpoint was trained on a different dataset; evaluating in transfer mode")
    projector = _projector(cfg, dataset.train, ckpt.svd_cutoff, ckpt.svd_seed, ckpt.omega)
    return ckpt, ckpt.to_filter(projector)


def cmd_eval(cfg: RunConfig, checkpoint: str, per_user: bool) -> int:
    dataset = _load(cfg)
    out = _prepare_output(cfg, dataset)
    _, f = _checkpoint_filter(cfg, checkpoint, dataset)
    result = evaluate(f, dataset, cfg.k, workers=4 if cfg.fast else 1, keep_per_user=per_user)
    text = result.to_json(dataset.name, cfg.content_hash())
    (out / "metrics.json").write_text(text + "\n", encoding="utf-8")
    if per_user:
        result.write_per_user(out / "per_user.csv")
    print(text)
    return EXIT_OK


def cmd_recommend(cfg: RunConfig, checkpoint: str, user: int, k: int) -> int:
    dataset = _load(cfg)
    if not 0 <= user < dataset.num_users:
        raise UsageError(f"unknown user {user} (dataset has {dataset.num_users} users)")
    _, f = _checkpoint_filter(cfg, checkpoint, dataset)
    scores = score_user(f, dataset.train, user)
    for item in top_k(scores, k):
        print(f"{item}\t{float(scores[item])!r}")
    return EXIT_OK


def _small_matrix(cfg: RunConfig, args) -> InteractionMatrix:
    if cfg.dataset or cfg.train_path:
        return _load(cfg).train
    rng = np.random.default_rng(cfg.seed)
    return InteractionMatrix(random_interactions(rng, args.m, args.n, args.density))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items() if not isinstance(v, np.ndarray)}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def cmd_diagnose(cfg: RunConfig, args) -> int:
    what = args.what
    out = _prepare_output(cfg, None)
    if what == "theorem2":
        R = _small_matrix(cfg, args)
        pairs = [tuple(float(v) for v in p.split(",")) for p in args.pairs]
        report = [vars(p) for p in diagnostics.verify_theorem2(R, pairs)]
    elif what == "rankbound":
        R = _small_matrix(cfg, args)
        rng = np.random.default_rng(cfg.seed)
        report = []
        for _ in range(args.trials):
            sim = diagnostics.EmbeddingSim.random(R.num_users, R.num_items, args.d, cfg.K, rng)
            r = diagnostics.verify_rank_bound(sim, R)
            report.append({"rank": r["rank"], "embedding_dim": args.d, "bound_holds": r["bound_holds"]})
    elif what == "response":
        if not args.checkpoint:
            raise UsageError("diagnose response needs --checkpoint")
        curve = response_curve(load_checkpoint(args.checkpoint).kernel(), args.points)
        write_response_csv(out / "response.csv", curve)
        report = {"csv": str(out / "response.csv"), "points": args.points, "gammas": list(curve.gammas)}
    elif what == "transfer":
        if not args.checkpoint:
            raise UsageError("diagnose transfer needs --checkpoint")
        dataset = _load(cfg)
        ckpt = load_checkpoint(args.checkpoint)
        projector = _projector(cfg, dataset.train, ckpt.svd_cutoff, ckpt.svd_seed, ckpt.omega)
        rep = diagnostics.transfer_kernel(args.checkpoint, dataset, projector=projector, k=cfg.k)
        report = json.loads(rep.to_json())
    else:  # ablation
        dataset = _load(cfg)
        report = {}
        for variant in diagnostics.Variant:
            spec = diagnostics.build_ablation(variant, cfg.filter_spec())
            projector = _projector(cfg, dataset.train, spec.cutoff, spec.svd_seed, spec.omega)
            f = train(dataset, cfg.train_config(), spec, projector).filter
            res = evaluate(f, dataset, cfg.k)
            report[variant.value] = {"recall": res.recall_at_k, "ndcg": res.ndcg_at_k}
    text = json.dumps(_jsonable(report), indent=2)
    (out / f"diagnose_{what}.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polycf", description="Polynomial spectral Gram filters for collaborative filtering")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a kernel and write a checkpoint")
    _config_flags(p)

    p = sub.add_parser("eval", help="Recall@K / NDCG@K of a checkpoint")
    _config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--per-user", action="store_true", help="also write per_user.csv")

    p = sub.add_parser("recommend", help="top-k items for one user")
    _config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--top", type=int, default=20, help="number of items to list")

    p = sub.add_parser("diagnose", help="small-scale verification reports")
    p.add_argument("what", choices=["theorem2", "rankbound", "response", "transfer", "ablation"])
    _config_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--pairs", nargs="+", default=["0,1", "0.2,0.8", "0.5,0.5"], help="gamma pairs g1,g2")
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--d", type=int, default=4, help="embedding dimension")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--points", type=int, default=101)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.per_user)
        if args.command == "recommend":
            return cmd_recommend(cfg, args.checkpoint, args.user, args.top)
        return cmd_diagnose(cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"polycf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        print(f"polycf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
