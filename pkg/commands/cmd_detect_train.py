# commands/cmd_detect_train.py

from config import override
from commands import add_jobs_argument, add_path_arguments, make_pipeline, resolve_config


def register(subparsers):
    parser = subparsers.add_parser("detect-train", help="Train the max-pooled MIL detector of every class")
    add_path_arguments(parser)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--learning-rate", type=float, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--weight-decay", type=float, default=None)
    add_jobs_argument(parser)
    parser.set_defaults(func=run)


def run(args):
    cfg = resolve_config(args)
    train = override(
        cfg.train,
        seed=args.seed,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
    )
    cfg = override(cfg, train=train)
    make_pipeline(cfg).train_detectors(cfg.paths.dataset)
    return 0
