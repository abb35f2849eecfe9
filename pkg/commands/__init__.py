# commands/__init__.py

"""
One module per subcommand. Each exposes `register(subparsers)` and `run(args) -> int`.
The helpers here turn parsed arguments into a PipelineConfig: values come from the
config file first, and every flag given on the command line overrides them.
"""

import logging

from config import PipelineConfig, load_pipeline_config, override
from modules.pipeline import IrregularityPipeline
from utils import tqdm_progress_callback


def add_path_arguments(parser, dataset_help="Dataset (JSON lines)", models=True, outputs=False):
    parser.add_argument("--dataset", default=None, help=f"{dataset_help}; defaults to [paths] dataset")
    if models:
        parser.add_argument("--models", default=None, help="Model directory; defaults to [paths] models")
    if outputs:
        parser.add_argument("--outputs", default=None, help="Output directory; defaults to [paths] outputs")


def add_jobs_argument(parser):
    parser.add_argument("--jobs", type=int, default=None, help="Worker threads for per-image work")


def resolve_config(args, **pipeline_changes) -> PipelineConfig:
    """Config file values with path, jobs and any given pipeline-level flags applied on top."""
    cfg = load_pipeline_config(getattr(args, "config", None))
    paths = override(
        cfg.paths,
        dataset=getattr(args, "dataset", None),
        models=getattr(args, "models", None),
        outputs=getattr(args, "outputs", None),
    )
    return override(cfg, paths=paths, jobs=getattr(args, "jobs", None), **pipeline_changes)


def make_pipeline(cfg: PipelineConfig) -> IrregularityPipeline:
    quiet = logging.getLogger().getEffectiveLevel() > logging.INFO
    return IrregularityPipeline(cfg, progress_callback=tqdm_progress_callback(disable=quiet))
