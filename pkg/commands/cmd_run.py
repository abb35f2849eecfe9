# commands/cmd_run.py

from config import METHODS, override
from commands import add_jobs_argument, add_path_arguments, make_pipeline, resolve_config
from modules.evaluation import comparison_table, format_table


def register(subparsers):
    parser = subparsers.add_parser("run", help="Run the whole pipeline as configured")
    add_path_arguments(parser, outputs=True)
    parser.add_argument("--method", choices=METHODS + ("all",), default=None)
    parser.add_argument("--no-synth", dest="synthesize", action="store_const", const=False, default=None,
                        help="Use the existing dataset instead of generating one")
    parser.add_argument("--synth", dest="synthesize", action="store_const", const=True)
    parser.add_argument("--planted-scores", dest="use_planted_scores", action="store_const", const=True,
                        default=None, help="Skip detector training and use the scores stored in the dataset")
    parser.add_argument("--seed", type=int, default=None, help="Seed for every stage")
    parser.add_argument("--top-n", type=int, default=None, help="Proposals per image used by the GP methods")
    parser.add_argument("--max-train-images", type=int, default=None, help="Training images per GP model")
    add_jobs_argument(parser)
    parser.set_defaults(func=run)


def run(args):
    cfg = resolve_config(
        args,
        method=args.method,
        synthesize=args.synthesize,
        use_planted_scores=args.use_planted_scores,
    )
    cfg = override(
        cfg,
        train=override(cfg.train, seed=args.seed),
        gp=override(cfg.gp, seed=args.seed, top_n=args.top_n, max_train_images=args.max_train_images),
        synth=override(cfg.synth, seed=args.seed),
    )
    reports = make_pipeline(cfg).run()
    print(format_table(comparison_table(reports)))
    return 0
