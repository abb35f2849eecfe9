# commands/cmd_gp_fit.py

from config import override
from commands import add_jobs_argument, add_path_arguments, make_pipeline, resolve_config


def register(subparsers):
    parser = subparsers.add_parser("gp-fit", help="Fit the regular and other-class GP models of every class")
    add_path_arguments(parser, dataset_help="Scored dataset")
    parser.add_argument("--top-n", type=int, default=None, help="Proposals kept per training image")
    parser.add_argument("--max-train-images", type=int, default=None, help="Training images per model")
    parser.add_argument("--max-iters", type=int, default=None, help="L-BFGS-B iteration limit")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--no-inner-kernel", dest="use_inner_kernel", action="store_const", const=False,
                        default=None, help="Drop the same-image overlap term (saved as the gp-inter models)")
    add_jobs_argument(parser)
    parser.set_defaults(func=run)


def run(args):
    cfg = resolve_config(args)
    gp = override(
        cfg.gp,
        top_n=args.top_n,
        max_train_images=args.max_train_images,
        max_iters=args.max_iters,
        seed=args.seed,
        use_inner_kernel=args.use_inner_kernel,
    )
    cfg = override(cfg, gp=gp)
    make_pipeline(cfg).fit_gp(cfg.paths.dataset)
    return 0
