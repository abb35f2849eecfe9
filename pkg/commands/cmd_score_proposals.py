# commands/cmd_score_proposals.py

from commands import add_jobs_argument, add_path_arguments, make_pipeline, resolve_config


def register(subparsers):
    parser = subparsers.add_parser("score-proposals", help="Score every proposal with its class detector")
    add_path_arguments(parser, outputs=True)
    parser.add_argument("--out", default=None, help="Scored dataset; defaults to <outputs>/scored.jsonl")
    add_jobs_argument(parser)
    parser.set_defaults(func=run)


def run(args):
    cfg = resolve_config(args)
    pipeline = make_pipeline(cfg)
    pipeline.score_proposals(cfg.paths.dataset, args.out or pipeline.layout.scored_dataset())
    return 0
