"""
nevncd command line: dataset generation, training, evaluation, ablation sweeps and embedding export
"""

import argparse
import logging
import pathlib
import sys
from typing import List, Optional

import numpy as np

from nevncd import Evaluation, SynthData, Trainer
from nevncd.Core import ConfigError, DataError, Error, Hyperparams, NumericError, ShapeError
from nevncd.RunConfig import RunConfig, ablation_rows, preset, preset_names
from nevncd.Utilities import Checkpoint, ExcelExport
from nevncd.Utilities.TextIO import dump_yaml, format_yaml
from nevncd.Utilities.Tools import CE, CL, CLUSTERING_TOGGLES, FULL, LOSS_TOGGLES, SUP

logger = logging.getLogger(__name__)

APP_NAME = 'nevncd'

GEN_DATA = 'gen-data'
TRAIN = 'train'
EVAL = 'eval'
ABLATE = 'ablate'
EXPORT_EMBEDDINGS = 'export-embeddings'

CONFIG_FILE = 'config.yaml'
REPORT_FILE = 'report.yaml'
DATA_DIR = 'data'

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


class ArgumentParser(argparse.ArgumentParser):
    """
    Usage errors exit with the configuration exit code
    """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, '{}: error: {}\n'.format(self.prog, message))


# HELPERS ------------------------------------------------------------------------------------------

def ablate_losses(text: str) -> List[str]:
    """
    Loss toggles of an --ablate value
    'sup' keeps cross-entropy only, 'full' keeps everything, otherwise a comma list of the
    clustering terms (nl, H, var) kept on top of ce and cl
    """
    names = [name.strip() for name in text.split(',') if name.strip()]
    if names == [SUP]:
        return [CE]
    if names == [FULL]:
        return list(LOSS_TOGGLES)
    unknown = [name for name in names if name not in CLUSTERING_TOGGLES]
    if unknown or not names:
        raise ConfigError('--ablate takes \'sup\', \'full\' or a comma list of {}, got {!r}'.format(
            CLUSTERING_TOGGLES, text), key='ablate')
    return [CE, CL] + [toggle for toggle in CLUSTERING_TOGGLES if toggle in names]


def load_run_config(args) -> RunConfig:
    if args.config is not None and args.preset is not None:
        raise ConfigError('Give either --config or --preset, not both', key='config')
    if args.config is not None:
        config = RunConfig.load(args.config)
    elif args.preset is not None:
        config = preset(args.preset)
    else:
        raise ConfigError('One of --config or --preset is required', key='config')
    if getattr(args, 'seed', None) is not None:
        config = config.withSeed(args.seed)
    if getattr(args, 'epochs', None) is not None:
        config.train.epochs = args.epochs
        config.validate()
    return config


def _outputDir(args, config: RunConfig) -> pathlib.Path:
    path = pathlib.Path(args.out if args.out is not None else config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def generate_dataset(config: RunConfig) -> SynthData.Dataset:
    dataset = SynthData.generate(config.data, config.data_seed)
    dataset.provenance['run_hash'] = config.hash()
    return dataset


def check_dataset(dataset: SynthData.Dataset, config: RunConfig):
    if dataset.spec != config.spec:
        raise ShapeError('dataset dimensions (L={}, U={}, K={}, shape {}) do not match the configuration '
                         '(L={}, U={}, K={}, shape {})'.format(dataset.spec.L, dataset.spec.U, dataset.spec.K,
                                                               dataset.spec.feature_shape, config.spec.L,
                                                               config.spec.U, config.spec.K, config.spec.feature_shape))


def write_report(report: Evaluation.EvalReport, path, **extra):
    data = report.toDict()
    data.update(extra)
    dump_yaml(data, path)
    return data


# COMMANDS -----------------------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    config = load_run_config(args)
    out = _outputDir(args, config)
    dataset = generate_dataset(config)
    SynthData.save(dataset, out)
    config.save(out / CONFIG_FILE)
    print('Wrote {} train / {} test examples to {} (oracle accuracy {:.4f})'.format(
        len(dataset.train), len(dataset.test), out, dataset.provenance['oracle_accuracy']))
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_run_config(args)
    if args.ablate is not None:
        config = config.withLosses(ablate_losses(args.ablate))
    out = _outputDir(args, config)

    if args.data is not None:
        dataset = SynthData.load(args.data)
    else:
        dataset = generate_dataset(config)
        SynthData.save(dataset, out / DATA_DIR)
    check_dataset(dataset, config)
    config.save(out / CONFIG_FILE)

    if args.resume is not None:
        network, log = Trainer.resume(args.resume, dataset, config.train, config.hyper, outputDir=out)
    else:
        network, log = Trainer.train(dataset, config.buildNetwork(), config.train, config.hyper, outputDir=out)

    report = Evaluation.evaluate(network, dataset.test, config.hyper)
    data = write_report(report, out / REPORT_FILE, run_hash=config.hash(),
                        config_hash=Trainer.training_hash(dataset, network, config.train, config.hyper))
    print(format_yaml(data), end='')
    return EXIT_OK


def _loadCheckpointAndData(args):
    checkpoint = Checkpoint.load(args.checkpoint)
    dataset = SynthData.load(args.data)
    if checkpoint.spec != dataset.spec:
        raise ShapeError('checkpoint was trained for {} but the dataset is {}'.format(checkpoint.spec, dataset.spec))
    network = Checkpoint.restore_network(checkpoint)

    hyper = Hyperparams()
    if args.config is not None:
        config = RunConfig.load(args.config)
        hyper = config.hyper
        expected = Trainer.training_hash(dataset, network, config.train, hyper)
        if expected != checkpoint.config_hash:
            raise ConfigError('checkpoint {} does not belong to configuration {}'.format(args.checkpoint, args.config),
                              key='config_hash')
    return checkpoint, dataset, network, hyper


def cmd_eval(args) -> int:
    checkpoint, dataset, network, hyper = _loadCheckpointAndData(args)
    report = Evaluation.evaluate(network, dataset.test, hyper)

    out = pathlib.Path(args.out) if args.out is not None else pathlib.Path(args.checkpoint).parent / REPORT_FILE
    data = write_report(report, out, config_hash=checkpoint.config_hash)
    print(format_yaml(data), end='')

    if args.export_embeddings is not None:
        Evaluation.export_embeddings(network, dataset.test, hyper, args.export_embeddings)
    if args.excel is not None:
        ExcelExport.export_report(report, args.excel, dataset.spec)
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    _, dataset, network, hyper = _loadCheckpointAndData(args)
    examples = dataset.test if args.split == 'test' else dataset.train
    if not examples:
        raise DataError('the {} split is empty'.format(args.split))
    Evaluation.export_embeddings(network, examples, hyper, args.out)
    return EXIT_OK


def run_ablation(config: RunConfig, rows, seeds, out: pathlib.Path) -> List[dict]:
    """
    Trains every (row, seed) pair and summarizes the test metrics per row
    :return: one summary dict per row
    """
    summary = []
    for row, losses in ablation_rows(rows):
        runs = []
        for seed in seeds:
            runConfig = config.withLosses(losses).withSeed(seed)
            dataset = generate_dataset(runConfig)
            runDir = out / row / 'seed-{}'.format(seed)
            network, _ = Trainer.train(dataset, runConfig.buildNetwork(), runConfig.train, runConfig.hyper,
                                       outputDir=runDir)
            report = Evaluation.evaluate(network, dataset.test, runConfig.hyper)
            write_report(report, runDir / REPORT_FILE, run_hash=runConfig.hash())
            runs.append({'seed': int(seed), 'acr': report.acr, 'acc': report.acc, 'silhouette': report.silhouette})
            logger.info('ablation %s seed %d: acr %s acc %s', row, seed, report.acr, report.acc)

        def mean(key):
            values = [run[key] for run in runs if run[key] is not None]
            return float(np.mean(values)) if values else None

        summary.append({'row': row, 'losses': losses, 'mean_acr': mean('acr'), 'mean_acc': mean('acc'),
                        'mean_silhouette': mean('silhouette'), 'runs': runs})
    return summary


def cmd_ablate(args) -> int:
    config = load_run_config(args)
    out = _outputDir(args, config)
    config.save(out / CONFIG_FILE)
    rows = [row.strip() for row in args.rows.split(',')] if args.rows is not None else None
    seeds = [int(seed) for seed in args.seeds.split(',')]

    summary = run_ablation(config, rows, seeds, out)
    dump_yaml({'run_hash': config.hash(), 'rows': summary}, out / 'ablation.yaml')
    ExcelExport.export_ablation(summary, out / 'ablation.xlsx')
    for entry in summary:
        print('{:<8} acr {} acc {} sc {}'.format(entry['row'], entry['mean_acr'], entry['mean_acc'],
                                                 entry['mean_silhouette']))
    return EXIT_OK


# mapping of subcommands to their handlers
COMMANDS = {GEN_DATA: cmd_gen_data,
            TRAIN: cmd_train,
            EVAL: cmd_eval,
            ABLATE: cmd_ablate,
            EXPORT_EMBEDDINGS: cmd_export_embeddings}


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog=APP_NAME, description='Novel category discovery training and evaluation')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    subparsers = parser.add_subparsers(dest='command', required=True, parser_class=ArgumentParser)

    def addConfig(sub):
        sub.add_argument('--config', help='RunConfig YAML file')
        sub.add_argument('--preset', choices=preset_names(), help='built-in RunConfig')
        sub.add_argument('--out', help='output directory (default: output_dir of the config)')

    sub = subparsers.add_parser(GEN_DATA, help='generate a synthetic dataset')
    addConfig(sub)
    sub.add_argument('--seed', type=int, help='override every seed of the config')

    sub = subparsers.add_parser(TRAIN, help='train a network and evaluate it on the test split')
    addConfig(sub)
    sub.add_argument('--data', help='dataset directory (default: generate from the config)')
    sub.add_argument('--ablate', help='sup, full or the clustering terms kept on top of ce and cl, e.g. nl,H')
    sub.add_argument('--resume', help='checkpoint to continue from')
    sub.add_argument('--seed', type=int, help='override every seed of the config')
    sub.add_argument('--epochs', type=int, help='override train.epochs')

    sub = subparsers.add_parser(EVAL, help='evaluate a checkpoint on a dataset')
    sub.add_argument('--checkpoint', required=True)
    sub.add_argument('--data', required=True)
    sub.add_argument('--config', help='RunConfig the checkpoint must belong to')
    sub.add_argument('--out', help='report file (default: report.yaml beside the checkpoint)')
    sub.add_argument('--export-embeddings', dest='export_embeddings', help='CSV of the test embeddings')
    sub.add_argument('--excel', help='.xlsx copy of the report')

    sub = subparsers.add_parser(ABLATE, help='sweep the ablation rows over seeds')
    addConfig(sub)
    sub.add_argument('--rows', help='comma list of rows (default: all)')
    sub.add_argument('--seeds', default='0,1,2,3,4', help='comma list of seeds')
    sub.add_argument('--epochs', type=int, help='override train.epochs')

    sub = subparsers.add_parser(EXPORT_EMBEDDINGS, help='write the embeddings of a split as CSV')
    sub.add_argument('--checkpoint', required=True)
    sub.add_argument('--data', required=True)
    sub.add_argument('--config', help='RunConfig the checkpoint must belong to')
    sub.add_argument('--out', required=True, help='CSV file')
    sub.add_argument('--split', choices=['test', 'train'], default='test')

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    try:
        return COMMANDS[args.command](args)
    except NumericError as e:
        print('error: {}'.format(e.message), file=sys.stderr)
        return EXIT_NUMERIC
    except Error as e:
        print('error: {}'.format(e.message), file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print('error: {}'.format(e), file=sys.stderr)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
