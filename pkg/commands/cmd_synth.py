# commands/cmd_synth.py

from config import override
from commands import add_jobs_argument, make_pipeline, resolve_config


def register(subparsers):
    parser = subparsers.add_parser("synth", help="Generate a synthetic dataset with known irregular images")
    parser.add_argument("--out", default=None, help="Output file; defaults to [paths] dataset")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--images-per-status", type=int, default=None, help="Train images per status")
    parser.add_argument("--test-images-per-status", type=int, default=None)
    parser.add_argument("--proposals", type=int, default=None, help="Proposals per image")
    parser.add_argument("--feature-dim", type=int, default=None)
    parser.add_argument("--score-noise", type=float, default=None)
    parser.add_argument("--flip-fraction", type=float, default=None,
                        help="Fraction of damaged-part proposals whose scores move off the object")
    parser.add_argument("--classes", nargs="+", default=None, help="Class names to generate")
    add_jobs_argument(parser)
    parser.set_defaults(func=run)


def run(args):
    cfg = resolve_config(args)
    synth = override(
        cfg.synth,
        seed=args.seed,
        images_per_status=args.images_per_status,
        test_images_per_status=args.test_images_per_status,
        proposals_per_image=args.proposals,
        feature_dim=args.feature_dim,
        score_noise=args.score_noise,
        irregular_flip_fraction=args.flip_fraction,
        classes=tuple(args.classes) if args.classes else None,
    )
    cfg = override(cfg, synth=synth)
    make_pipeline(cfg).synthesize(args.out or cfg.paths.dataset)
    return 0
