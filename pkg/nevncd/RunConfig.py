"""
Run configuration: one YAML file merging the data generator, model, hyper-parameter and training settings
plus the output directory, and the built-in presets
"""

import logging
from dataclasses import dataclass, asdict, field, fields, replace
from typing import List

from nevncd.Core import ConfigError, DatasetSpec, Hyperparams
from nevncd.Model import DEFAULT_DISC_WIDTHS, DEFAULT_EMBED_DIM, DEFAULT_WIDTHS, NcdNetwork, init_params
from nevncd.SynthData import GeneratorConfig
from nevncd.Trainer import TrainConfig
from nevncd.Utilities.TextIO import content_hash, dump_yaml, load_yaml
from nevncd.Utilities.Tools import ABLATION_ROWS, ADV_UNIFORM

logger = logging.getLogger(__name__)

SECTIONS = ['data', 'model', 'hyper', 'train', 'output_dir']
SPEC_KEYS = [item.name for item in fields(DatasetSpec)]


@dataclass
class ModelConfig:
    widths: List[int] = field(default_factory=lambda: list(DEFAULT_WIDTHS))
    embed_dim: int = DEFAULT_EMBED_DIM
    disc_widths: List[int] = field(default_factory=lambda: list(DEFAULT_DISC_WIDTHS))


def _checkKeys(section: str, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError('{} must be a mapping, got {!r}'.format(section, data), key=section)
    for key in data:
        if key not in allowed:
            raise ConfigError('Unknown configuration key \'{}.{}\''.format(section, key),
                              key='{}.{}'.format(section, key))


def _build(cls, section: str, data: dict):
    try:
        return cls(**data)
    except ConfigError as e:
        raise ConfigError(e.message, key='{}.{}'.format(section, e.key) if e.key else section)
    except TypeError as e:
        raise ConfigError('{}: {}'.format(section, e), key=section)


@dataclass
class RunConfig:
    data: GeneratorConfig
    data_seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = 'runs'

    @property
    def spec(self) -> DatasetSpec:
        return self.data.spec

    def validate(self):
        try:
            self.data.validate()
        except ConfigError as e:
            raise ConfigError(e.message, key='data.{}'.format(e.key))
        try:
            self.hyper.validate(self.spec)
        except ConfigError as e:
            raise ConfigError(e.message, key='hyper.{}'.format(e.key))
        try:
            self.train.validate()
        except ConfigError as e:
            raise ConfigError(e.message, key='train.{}'.format(e.key))
        return self

    def toDict(self) -> dict:
        """
        Every setting, defaults included
        """
        data = self.data.toDict()
        spec = data.pop('spec')
        return {'data': dict(spec, **data, seed=self.data_seed),
                'model': asdict(self.model),
                'hyper': self.hyper.toDict(),
                'train': self.train.toDict(),
                'output_dir': self.output_dir}

    @classmethod
    def fromDict(cls, data) -> 'RunConfig':
        data = data or {}
        _checkKeys('config', data, SECTIONS)
        if 'data' not in data:
            raise ConfigError('Missing configuration section \'data\'', key='data')

        dataSection = dict(data['data'])
        generatorKeys = [item.name for item in fields(GeneratorConfig) if item.name != 'spec']
        _checkKeys('data', dataSection, SPEC_KEYS + generatorKeys + ['seed'])
        seed = int(dataSection.pop('seed', 0))
        spec = _build(DatasetSpec, 'data', {key: dataSection.pop(key) for key in SPEC_KEYS if key in dataSection})
        generator = _build(GeneratorConfig, 'data', dict(dataSection, spec=spec))

        sections = {}
        for name, cls_ in (('model', ModelConfig), ('hyper', Hyperparams), ('train', TrainConfig)):
            section = data.get(name) or {}
            _checkKeys(name, section, [item.name for item in fields(cls_)])
            sections[name] = _build(cls_, name, section)

        return cls(data=generator, data_seed=seed, model=sections['model'], hyper=sections['hyper'],
                   train=sections['train'], output_dir=str(data.get('output_dir', 'runs'))).validate()

    @classmethod
    def load(cls, path) -> 'RunConfig':
        return cls.fromDict(load_yaml(path))

    def save(self, path):
        dump_yaml(self.toDict(), path)

    def hash(self) -> str:
        """
        sha256 of the materialized settings, the output directory excluded
        """
        data = self.toDict()
        data.pop('output_dir')
        return content_hash(data)

    def withSeed(self, seed: int) -> 'RunConfig':
        """
        Same run with the data, initialization and sampling seeds all set to seed
        """
        return replace(self, data_seed=int(seed), hyper=replace(self.hyper, seed=int(seed)),
                       train=replace(self.train, seed=int(seed)))

    def withLosses(self, losses) -> 'RunConfig':
        return replace(self, train=replace(self.train, losses=list(losses)))

    def buildNetwork(self) -> NcdNetwork:
        return init_params(self.spec, self.model.widths, self.hyper.seed, self.model.embed_dim,
                           self.model.disc_widths)


# PRESETS ------------------------------------------------------------------------------------------

def separable_10() -> RunConfig:
    """
    L=6, U=4, feature_dim=16, separation 6, 200 per class, 30 epochs, all losses
    """
    spec = DatasetSpec(L=6, U=4, K=1, feature_dim=16, seq_len=1)
    return RunConfig(data=GeneratorConfig(spec, n_per_class=200, class_separation=6.0),
                     output_dir='runs/separable-10')


def _ablation(row: str) -> RunConfig:
    config = separable_10().withLosses(ABLATION_ROWS[row])
    return replace(config, output_dir='runs/{}'.format(row))


# view layouts: name -> (hidden labeled training views, hidden unlabeled training views)
VIEW_LAYOUTS = {'views-all': ([], []),
                'views-unlabeled-v1': ([], [0, 2]),
                'views-labeled-v1': ([0, 2], []),
                'views-partial-12': ([0], [0]),
                'views-partial-01': ([2], [2])}


# -vi presets: adversarial weight and discriminator steps per encoder step
INVARIANT_LAMBDA_ADV = 1.0
INVARIANT_DISC_STEPS = 2


def _views(name: str, invariant: bool) -> RunConfig:
    """
    K=3 views that shift every class off the class subspace, with the layout's training cells hidden
    The -vi variant adds cross-view category positives and the uniform view adversary.
    """
    hiddenLabeled, hiddenUnlabeled = VIEW_LAYOUTS[name]
    spec = DatasetSpec(L=6, U=4, K=3, feature_dim=16, seq_len=1)
    config = RunConfig(data=GeneratorConfig(spec, n_per_class=240, class_separation=6.0, view_mode='nuisance',
                                            view_shift=6.0, hidden_labeled_views=list(hiddenLabeled),
                                            hidden_unlabeled_views=list(hiddenUnlabeled)),
                       output_dir='runs/{}{}'.format(name, '-vi' if invariant else ''))
    if invariant:
        config = replace(config, hyper=replace(config.hyper, cross_view=True),
                         train=replace(config.train, adversarial=ADV_UNIFORM, lambda_adv=INVARIANT_LAMBDA_ADV,
                                       disc_steps_per_enc_step=INVARIANT_DISC_STEPS))
    return config


def preset_names() -> List[str]:
    names = ['separable-10'] + list(ABLATION_ROWS)
    for name in VIEW_LAYOUTS:
        names += [name, name + '-vi']
    return names


def preset(name: str) -> RunConfig:
    """
    :param name: one of preset_names()
    :return: RunConfig of the preset
    """
    if name == 'separable-10':
        return separable_10()
    if name in ABLATION_ROWS:
        return _ablation(name)
    base = name[:-len('-vi')] if name.endswith('-vi') else name
    if base in VIEW_LAYOUTS:
        return _views(base, name.endswith('-vi'))
    raise ConfigError('Unknown preset {!r}, expected one of {}'.format(name, ', '.join(preset_names())), key='preset')


def ablation_rows(rows=None):
    """
    :param rows: ablation row names, None for every row
    :return: list of (row, losses)
    """
    rows = list(ABLATION_ROWS) if rows is None else list(rows)
    unknown = [row for row in rows if row not in ABLATION_ROWS]
    if unknown:
        raise ConfigError('Unknown ablation rows {}, expected from {}'.format(unknown, list(ABLATION_ROWS)),
                          key='rows')
    return [(row, list(ABLATION_ROWS[row])) for row in rows]

