import argparse
import logging
import os
import sys

from app.pipeline.experiment import Experiment
from app.pipeline.experiment_config import PRESETS, load_config
from app.utils.config import WORKDIR
from app.utils.errors import EvsvError
from app.utils.logger import logger, set_level
from app.utils.serialization import atomic_write_bytes


def _common_parser():
    """Options shared by every subcommand"""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", help="JSON experiment configuration")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named configuration preset")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. sv.model.max_iterations=50 (repeatable)")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--speakers", type=int, help="training-pool speakers in the generated corpus")
    parser.add_argument("--workdir", default=WORKDIR, help="directory for corpora, caches and runs")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes per stage")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="evsv",
        description="Emotional voice conversion as data augmentation for speaker verification",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("gen-corpus", parents=[common], help="generate and split the toy corpus")
    commands.add_parser("extract-features", parents=[common], help="fill the mel/mcep/F0 cache")

    p = commands.add_parser("train-converter", parents=[common], help="train neutral-to-emotion converters")
    p.add_argument("--emotions", nargs="+", help="target emotions (default: converter.emotions)")

    p = commands.add_parser("convert", parents=[common], help="convert one neutral WAV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--emotion", required=True)

    p = commands.add_parser("train-sv", parents=[common], help="train speaker models for augmentation plans")
    p.add_argument("--plan", action="append", help="plan such as 50n+10a+10h (default: augmentation.plans)")

    p = commands.add_parser("evaluate", parents=[common], help="EER breakdown for trained speaker models")
    p.add_argument("--plan", action="append", help="plan to evaluate (default: augmentation.plans)")

    commands.add_parser("run-experiment", parents=[common], help="run the full augmentation experiment grid")

    p = commands.add_parser("report", parents=[common], help="print the reports of a finished run")
    p.add_argument("--absolute", action="store_true", help="also print absolute EERs")
    return parser


def make_experiment(args):
    overrides = list(args.overrides)
    if args.speakers is not None:
        overrides.append(f"corpus.speakers={args.speakers}")
    config = load_config(args.config, args.preset, args.seed, overrides)
    return Experiment(config, args.workdir, jobs=args.jobs)


def run_command(args):
    experiment = make_experiment(args)
    logger.info(f"Run directory: {experiment.run_dir}")
    command = args.command

    if command == "convert":
        experiment.convert_file(args.input, args.output, args.emotion, seed=experiment.config.seed)
        logger.info(f"Wrote {args.output}")
        return

    if command == "report":
        texts = experiment.render_reports(absolute=args.absolute)
        for name, text in texts.items():
            atomic_write_bytes(os.path.join(experiment.reports_dir, name), text.encode("utf-8"))
            print(text)
        return

    manifest = experiment.prepare_corpus()
    if command == "gen-corpus":
        logger.info(f"Manifest: {experiment.manifest_path} ({len(manifest)} utterances, "
                    f"{len(manifest.speakers())} speakers)")
    elif command == "extract-features":
        experiment.extract_features(manifest)
    elif command == "train-converter":
        converters = experiment.train_converters(manifest, args.emotions)
        logger.info(f"Converters ready: {', '.join(sorted(converters))}")
    elif command == "train-sv":
        for plan_text in args.plan or experiment.config.augmentation.plans:
            plan, _ = experiment.train_plan(manifest, plan_text)
            logger.info(f"Speaker model ready: {experiment.sv_path(plan)}")
    elif command == "evaluate":
        for plan_text in args.plan or experiment.config.augmentation.plans:
            experiment.evaluate_plan(manifest, plan_text)
        experiment.write_run_record()
    elif command == "run-experiment":
        record = experiment.run()
        logger.info(f"Run record written with {len(record.artifacts)} artifacts")
        print(experiment.render_reports()["relative_improvement.txt"])


def main(argv=None):
    """Main entry point for the application; returns the process exit code"""
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_level(logging.DEBUG)
    try:
        run_command(args)
    except EvsvError as e:
        logger.error(str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
