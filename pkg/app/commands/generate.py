from __future__ import annotations
import argparse
import logging

from app.commands.common import add_common_args, finish, prepare_out, print_json, resolve_config
from core.data.synthetic import GeneratorSpec, generate_synthetic_dataset, write_generated
from core.errors import ConfigError
from core.utils.file_utils import dir_is_nonempty

logger = logging.getLogger(__name__)


def register(sub) -> argparse.ArgumentParser:
    p = sub.add_parser("generate", help="Write a planted synthetic gait dataset (manifests, CSV sequences, provenance)")
    add_common_args(p)
    p.add_argument("--subjects", type=int, help="Total subject count; a quarter of them form the test split")
    p.add_argument("--seed", type=int, help="Generator seed (data.seed)")
    p.add_argument("--force", action="store_true", help="Write into a non-empty output directory")
    p.set_defaults(handler=run)
    return p


def run(args: argparse.Namespace) -> int:
    extra = {"data.seed": args.seed} if args.seed is not None else {}
    cfg = resolve_config(args, extra)
    out = args.out or cfg.data.dir
    if dir_is_nonempty(out) and not args.force:
        raise ConfigError(f"output directory {out} is not empty; pass --force to write into it")
    spec = GeneratorSpec.from_config(cfg.data).validate()
    data = generate_synthetic_dataset(spec)
    paths = write_generated(data, prepare_out(out))
    finish(cfg, out)
    print_json({
        "out": out,
        "train_subjects": len(data.train.subjects()),
        "test_subjects": len(data.test.subjects()),
        "train_sequences": len(data.train),
        "test_sequences": len(data.test),
        "manifests": paths,
    })
    return 0
