# commands/cmd_eval.py

from commands import add_path_arguments, make_pipeline, resolve_config
from modules.evaluation import comparison_table, format_table
from modules.pipeline import parse_named_paths


def register(subparsers):
    parser = subparsers.add_parser(
        "eval",
        help="AP / AUC / ROC of one or more score files",
        description="Writes a table-<method>.* summary, or with several --scores files a comparison.* table.",
    )
    add_path_arguments(parser, dataset_help="Labelled dataset", models=False, outputs=True)
    parser.add_argument("--scores", nargs="+", required=True, metavar="[METHOD=]CSV",
                        help="Score CSV(s); the method name defaults to the file name")
    parser.set_defaults(func=run)


def run(args):
    cfg = resolve_config(args)
    pipeline = make_pipeline(cfg)
    reports = {
        method: pipeline.evaluate(cfg.paths.dataset, path, method)
        for method, path in parse_named_paths(args.scores).items()
    }
    if len(reports) > 1:
        pipeline.compare(reports)
    else:
        # Single method: the table sits next to report-<method>.json.
        pipeline.compare(reports, stem=f"table-{next(iter(reports))}")
    print(format_table(comparison_table(reports)))
    return 0
