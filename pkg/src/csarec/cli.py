"""Command-line entry point: prepare-data, train, evaluate, simulate, report.

Two helpers, ``synth-sessions`` and ``synth-matrix``, write synthetic inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from . import datasets as ds
from .config import ConfigError, RunConfig
from .evaluation import evaluate
from .model import load_checkpoint, network_from_payload
from .simulator import DenseRewardMatrix, SimulatedEnv, evaluate_checkpoint, low_rank_matrix
from .trainer import train

log = logging.getLogger("csarec")


class CommandError(RuntimeError):
    pass


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CommandError(f"{what} not found: {p}")
    return p


def _load_config(args) -> RunConfig:
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "deterministic", None) is not None:
        overrides.append(f"train.deterministic={args.deterministic}")
    if args.config is not None:
        _require(args.config, "config file")
    return RunConfig.load(args.config, overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_prepare_data(args) -> None:
    cfg = _load_config(args)
    d = cfg["data"]
    sessions, raw_ids = ds.read_sessions_tsv(
        _require(args.input, "input TSV"), cfg.feedback_map(), d["min_session_length"]
    )
    if not sessions:
        raise CommandError("no sessions survive filtering")
    catalog = ds.CatalogInfo(len(raw_ids))
    train_s, val_s, test_s = ds.split_sessions(sessions, d["split_ratios"], d["split_seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "split.json", ds.split_manifest(train_s, val_s, test_s, d["split_seed"]))
    atomic_write_json(out / "items.json", {"num_items": catalog.num_items, "raw_item_ids": raw_ids})
    counts = {}
    for name, part in (("train", train_s), ("validation", val_s), ("test", test_s)):
        arrays = ds.TupleArrays.from_sessions(part, d["max_len"], catalog, cfg.rewards())
        fd, tmp = tempfile.mkstemp(dir=out, suffix=".npz.tmp")
        os.close(fd)
        ds.save_tuples(arrays, tmp, catalog)
        os.replace(tmp, out / f"{name}.npz")
        counts[name] = {"sessions": len(part), "tuples": len(arrays),
                        "purchases": int((arrays.feedback == int(ds.Feedback.PURCHASE)).sum())}
    atomic_write_json(out / "summary.json", {"num_items": catalog.num_items, "splits": counts})
    atomic_write_text(out / "config.ini", cfg.to_ini())
    print(f"prepared {len(sessions)} sessions, {catalog.num_items} items -> {out}")


def _load_split(data_dir, split: str):
    return ds.load_tuples(_require(Path(data_dir) / f"{split}.npz", f"{split} split"))


def cmd_train(args) -> None:
    cfg = _load_config(args)
    train_arrays, catalog = _load_split(args.data, "train")
    val_path = Path(args.data) / "validation.npz"
    val_arrays = ds.load_tuples(val_path)[0] if val_path.exists() else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.ini", cfg.to_ini())
    result = train(
        train_arrays,
        val_arrays,
        cfg.encoder_config(catalog.num_items),
        cfg.train_config(),
        out,
        resume=_require(args.resume, "resume checkpoint") if args.resume else None,
    )
    atomic_write_json(out / "validation.json", result.validation)
    print(f"best checkpoint: {result.best_checkpoint}")


def cmd_evaluate(args) -> None:
    cfg = _load_config(args)
    payload = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    net = network_from_payload(payload)
    arrays, catalog = _load_split(args.data, args.split)
    if catalog.num_items != net.num_items:
        raise CommandError(f"checkpoint has {net.num_items} items, data has {catalog.num_items}")
    ev = cfg["evaluate"]
    report = evaluate(
        net, arrays, feedback=args.feedback or ev["feedback"], seed=ev["seed"],
        use_q=args.use_q or ev["use_q"],
    )
    doc = report.to_dict()
    atomic_write_json(args.out, doc)
    print(json.dumps(doc))


def cmd_simulate(args) -> None:
    cfg = _load_config(args)
    sim = dict(cfg["simulate"])
    for key in ("rounds", "gamma", "repetitions"):
        if getattr(args, key) is not None:
            sim[key] = getattr(args, key)
    matrix = DenseRewardMatrix.load(_require(args.matrix, "matrix file"))
    env = SimulatedEnv(matrix, sim["warm_start"], sim["holdout_fraction"], seed=sim["seed"])
    payload = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    curve = evaluate_checkpoint(
        network_from_payload(payload), env, sim["rounds"], sim["repetitions"], sim["gamma"], sim["seed"]
    )
    doc = {
        "curve": [float(v) for v in curve],
        "rounds": sim["rounds"],
        "gamma": sim["gamma"],
        "repetitions": sim["repetitions"],
        "num_users": matrix.num_users,
    }
    atomic_write_json(args.out, doc)
    print(json.dumps({"final": doc["curve"][-1]}))


def cmd_report(args) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metric_rows, curves, logs = [], {}, {}
    for name in args.inputs:
        p = _require(name, "input document")
        label = p.parent.name + "/" + p.stem if p.parent.name else p.stem
        if p.suffix == ".jsonl":
            recs = [json.loads(ln) for ln in p.read_text().splitlines() if ln.strip()]
            logs[label] = recs
            continue
        doc = json.loads(p.read_text())
        if isinstance(doc, dict) and "curve" in doc:
            curves[label] = doc["curve"]
        elif isinstance(doc, dict) and any(k.startswith("hr@") for k in doc):
            metric_rows.append((label, doc))
        else:
            raise CommandError(f"{p}: not a metric, curve or training-log document")

    lines = []
    if metric_rows:
        keys = [k for k in metric_rows[0][1] if k != "n"]
        width = max(len(r[0]) for r in metric_rows)
        lines.append(" ".join([f"{'run':<{width}}"] + [f"{k:>9}" for k in keys] + [f"{'n':>7}"]))
        for label, doc in metric_rows:
            cells = [f"{doc.get(k, float('nan')):>9.4f}" for k in keys]
            lines.append(" ".join([f"{label:<{width}}"] + cells + [f"{doc.get('n', 0):>7d}"]))
    for label, curve in curves.items():
        lines.append(f"{label}: final cumulative reward {curve[-1]:.4f} over {len(curve)} rounds")
    atomic_write_text(out / "summary.txt", "\n".join(lines) + "\n")

    if curves:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, curve in curves.items():
            ax.plot(np.arange(1, len(curve) + 1), curve, marker="o", label=label)
        ax.set_xlabel("round")
        ax.set_ylabel("discounted cumulative reward")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "curves.png", dpi=120)
        plt.close(fig)
    if logs:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, recs in logs.items():
            ax.plot([r["step"] for r in recs], [r["total"] for r in recs], label=label, lw=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("total loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "losses.png", dpi=120)
        plt.close(fig)
    print("\n".join(lines))


def cmd_synth_sessions(args) -> None:
    m = ds.two_cluster_transition(args.items, leak=args.leak, concentration=args.concentration, seed=args.seed)
    sessions = ds.generate_synthetic(
        args.sessions, args.items, args.seed, m, args.purchase_prob,
        length_range=(args.min_length, args.max_length),
    )
    fd, tmp = tempfile.mkstemp(dir=Path(args.out).parent or ".", suffix=".tmp")
    os.close(fd)
    ds.write_sessions_tsv(sessions, tmp)
    os.replace(tmp, args.out)
    print(f"wrote {len(sessions)} sessions to {args.out}")


def cmd_synth_matrix(args) -> None:
    matrix = low_rank_matrix(args.users, args.items, rank=args.rank, seed=args.seed)
    fd, tmp = tempfile.mkstemp(dir=Path(args.out).parent or ".", suffix=".tmp")
    os.close(fd)
    matrix.save(tmp)
    os.replace(tmp, args.out)
    print(f"wrote {args.users}x{args.items} matrix to {args.out}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csarec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, help="overrides train.seed")
        p.add_argument("--deterministic", choices=("true", "false"), help="overrides train.deterministic")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
        p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("prepare-data", help="parse a TSV log into splits and tuple caches")
    p.add_argument("--input", required=True)
    common(p, "output data directory")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="train a model on a prepared data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--resume", help="checkpoint (last.pt) to resume from")
    common(p, "run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="HR/NDCG@k of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--feedback", choices=("purchase", "click", "all"))
    p.add_argument("--use-q", action="store_true", help="rank by mean Q-values instead")
    common(p, "metric document (JSON)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="multi-round rollout on a dense reward matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--rounds", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--repetitions", "--reps", type=int, dest="repetitions")
    common(p, "curve document (JSON)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summary table and plots from metric/curve/log documents")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth-sessions", help="write a synthetic two-cluster session TSV")
    p.add_argument("--sessions", type=int, default=10000)
    p.add_argument("--items", type=int, default=50)
    p.add_argument("--leak", type=float, default=0.05)
    p.add_argument("--concentration", type=float, default=0.3)
    p.add_argument("--purchase-prob", type=float, default=0.2)
    p.add_argument("--min-length", type=int, default=3)
    p.add_argument("--max-length", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_sessions)

    p = sub.add_parser("synth-matrix", help="write a synthetic low-rank dense reward matrix")
    p.add_argument("--users", type=int, default=20)
    p.add_argument("--items", type=int, default=30)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_matrix)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    torch.set_num_threads(max(1, min(4, os.cpu_count() or 1)))
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CommandError, ValueError, OSError) as exc:
        print(f"error: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
