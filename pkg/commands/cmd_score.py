# commands/cmd_score.py

from config import METHODS, override
from commands import add_jobs_argument, add_path_arguments, make_pipeline, resolve_config


def register(subparsers):
    parser = subparsers.add_parser("score", help="Write one irregularity score per test image")
    add_path_arguments(parser, dataset_help="Scored dataset", outputs=True)
    parser.add_argument("--method", choices=METHODS, default=None)
    parser.add_argument("--top-n", type=int, default=None, help="Test proposals used by the GP methods")
    parser.add_argument("--topk", type=int, default=None, help="k of the miltopk baseline")
    parser.add_argument("--out", default=None, help="Score CSV; defaults to <outputs>/scores-<method>.csv")
    add_jobs_argument(parser)
    parser.set_defaults(func=run)


def run(args):
    cfg = resolve_config(args, method=args.method, topk=args.topk)
    cfg = override(cfg, gp=override(cfg.gp, top_n=args.top_n))
    method = cfg.method if cfg.method != "all" else METHODS[0]
    pipeline = make_pipeline(cfg)
    pipeline.score(cfg.paths.dataset, method, args.out or pipeline.layout.scores(method))
    return 0
