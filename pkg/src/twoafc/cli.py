"""Command-line entry points: dataset prep, simulation, training, clustering, serving."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import clustering
from .datasets import generate_shapes, ingest_idx, save_dataset, subsample
from .evaluation import level_report, pixel_baseline
from .model import TrainingConfig
from .oracle import OracleConfig
from .selection import SelectionConfig
from .session import Session, SessionConfig
from .simulate import run_simulation, true_labels_for

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if p.suffix == ".toml":
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    return json.loads(p.read_text())


def build_session_config(args, data: dict) -> SessionConfig:
    """Config file first, then explicit flags override."""
    if getattr(args, "dataset", None):
        data["dataset_dir"] = args.dataset
    if "dataset_dir" not in data:
        raise SystemExit("a dataset is required (--dataset or dataset_dir in the config file)")
    if getattr(args, "seed", None) is not None:
        data["master_seed"] = args.seed
        data.setdefault("training", {})["seed"] = args.seed
        data.setdefault("selection", {})["seed"] = args.seed
        data.setdefault("oracle", {})["seed"] = args.seed
    if getattr(args, "batch", None) is not None:
        data.setdefault("selection", {})["batch_size"] = args.batch
    if getattr(args, "oracle", False) and "oracle" not in data:
        data["oracle"] = {}
    training = TrainingConfig(**data.get("training", {}))
    sel = SelectionConfig(**data.get("selection", {}))
    oracle = OracleConfig(**data["oracle"]) if data.get("oracle") is not None else None
    return SessionConfig(
        dataset_dir=data["dataset_dir"],
        training=training,
        selection=sel,
        oracle=oracle,
        embedding_dim=data.get("embedding_dim", 8),
        normalize_output=data.get("normalize_output", True),
        lease_seconds=data.get("lease_seconds", 120.0),
        round_deadline_seconds=data.get("round_deadline_seconds"),
        pools_per_round=data.get("pools_per_round", 8),
        master_seed=data.get("master_seed", 0),
    )


def cmd_gen_shapes(args) -> int:
    manifest, records = generate_shapes(size=args.size, seed=args.seed)
    save_dataset(args.out, manifest, records)
    print(f"wrote {manifest.count} images to {args.out}")
    return 0


def cmd_ingest_idx(args) -> int:
    manifest, records = ingest_idx(args.images, args.labels, name=args.name)
    if args.per_label:
        records = subsample(records, args.per_label, args.seed)
        manifest.count = len(records)
        manifest.train_ids = [r.id for r in records]
    save_dataset(args.out, manifest, records)
    print(f"wrote {len(records)} images to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    config = build_session_config(args, load_config_file(args.config))
    if config.oracle is None:
        config = replace(config, oracle=OracleConfig(seed=config.master_seed))
    report = run_simulation(args.out, config, rounds=args.rounds, max_level=args.max_level)
    print(json.dumps(report.to_json(), indent=2))
    return 0


def cmd_train(args) -> int:
    session = Session.load(args.session)
    state = session.advance_round()
    print(json.dumps(state.to_json(), indent=2))
    return 0


def cmd_cluster(args) -> int:
    session = Session.load(args.session)
    dendrogram = session.dendrogram()
    if args.json_out:
        Path(args.json_out).write_text(clustering.to_json(dendrogram))
    if args.newick_out:
        Path(args.newick_out).write_text(clustering.to_newick(dendrogram))
    if not args.json_out and not args.newick_out:
        print(clustering.to_json(dendrogram))
    return 0


def cmd_eval(args) -> int:
    session = Session.load(args.session)
    dendrogram = session.dendrogram()
    labels = true_labels_for(session)
    baseline = pixel_baseline({r.id: r.pixels for r in session.records.values()})
    report = level_report(dendrogram, baseline, labels, args.max_level)
    if args.csv_out:
        Path(args.csv_out).write_text(report.as_csv())
    print(report.as_text())
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    session_dir = Path(args.session)
    if (session_dir / "state.json").exists():
        session = Session.load(session_dir)
    else:
        config = build_session_config(args, load_config_file(args.config))
        session = Session.create(session_dir, config)
    app = create_app(session, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twoafc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-shapes", help="render the synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_shapes)

    p = sub.add_parser("ingest-idx", help="parse IDX image/label files into a dataset directory")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="idx")
    p.add_argument("--per-label", type=int, default=0, dest="per_label")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest_idx)

    p = sub.add_parser("simulate", help="run the oracle-driven annotation loop")
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--rounds", type=int, default=8)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-level", type=int, default=3, dest="max_level")
    p.set_defaults(func=cmd_simulate, oracle=True)

    p = sub.add_parser("train", help="advance one round: train on answers, select the next batch")
    p.add_argument("--session", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="export the dendrogram of the latest checkpoint")
    p.add_argument("--session", required=True)
    p.add_argument("--json", dest="json_out")
    p.add_argument("--newick", dest="newick_out")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="print the level report against true labels")
    p.add_argument("--session", required=True)
    p.add_argument("--max-level", type=int, default=3, dest="max_level")
    p.add_argument("--csv", dest="csv_out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--session", required=True)
    p.add_argument("--dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static")
    p.set_defaults(func=cmd_serve, oracle=False)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
