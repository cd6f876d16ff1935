"""
Seeded synthetic multi-view datasets with known latent classes
A class-c, view-v sample is T_v(mu_c + eps), eps ~ N(0, sigma^2 I), T_v orthogonal map plus shift
"""

import csv
import logging
import math
import pathlib
from dataclasses import dataclass, field, asdict, replace
from typing import List, Optional

import numpy as np
from scipy.stats import ortho_group

from nevncd.Core import (LABELED, STATUSES, UNLABELED, ConfigError, DataError, DatasetSpec, Example, ParseError)
from nevncd.Utilities.TextIO import dump_yaml, format_float, load_yaml

logger = logging.getLogger(__name__)

VIEW_MODES = ['orthogonal', 'nuisance', 'identity']
TRAIN_FILE = 'train.csv'
TEST_FILE = 'test.csv'
PROVENANCE_FILE = 'provenance.yaml'
FIXED_COLUMNS = ['status', 'label', 'view']


@dataclass
class GeneratorConfig:
    spec: DatasetSpec
    n_per_class: int = 200
    # minimum inter-centroid distance in units of sigma
    class_separation: float = 6.0
    sigma: float = 1.0
    view_mode: str = 'orthogonal'
    # norm of each view translation in units of sigma
    view_shift: float = 1.0
    # (split, view) cells left empty in training
    hidden_labeled_views: List[int] = field(default_factory=list)
    hidden_unlabeled_views: List[int] = field(default_factory=list)
    holdout_fraction: float = 0.2

    def validate(self):
        if self.n_per_class < 2:
            raise ConfigError('n_per_class must be >= 2, got {}'.format(self.n_per_class), key='n_per_class')
        if self.class_separation < 0:
            raise ConfigError('class_separation must be >= 0', key='class_separation')
        if not self.sigma > 0:
            raise ConfigError('sigma must be > 0', key='sigma')
        if self.view_mode not in VIEW_MODES:
            raise ConfigError('view_mode must be one of {}, got {!r}'.format(VIEW_MODES, self.view_mode),
                              key='view_mode')
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError('holdout_fraction must be in [0, 1)', key='holdout_fraction')
        for key in ('hidden_labeled_views', 'hidden_unlabeled_views'):
            views = getattr(self, key)
            if any(not 0 <= view < self.spec.K for view in views):
                raise ConfigError('{} must be view ids in [0, {}), got {}'.format(key, self.spec.K, views), key=key)
        return self

    def toDict(self):
        data = asdict(self)
        data['spec'] = self.spec.toDict()
        return data

    @classmethod
    def fromDict(cls, data):
        data = dict(data)
        data['spec'] = DatasetSpec.fromDict(data['spec'])
        return cls(**data)


@dataclass
class ViewTransform:
    rotation: np.ndarray
    shift: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.rotation.T + self.shift

    def invert(self, x: np.ndarray) -> np.ndarray:
        return (x - self.shift) @ self.rotation


@dataclass
class Dataset:
    spec: DatasetSpec
    train: List[Example]
    test: List[Example]
    provenance: dict
    centroids: Optional[np.ndarray] = None
    transforms: Optional[List[ViewTransform]] = None

    def split(self, examples: List[Example], status: str) -> List[Example]:
        return [example for example in examples if example.status == status]


# GEOMETRY -----------------------------------------------------------------------------------------

def _orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0 if rng.random() < 0.5 else -1.0]])
    return ortho_group.rvs(dim, random_state=rng)


def place_centroids(nClasses: int, dim: int, distance: float, rng: np.random.Generator) -> np.ndarray:
    """
    Puts class centroids at +-distance along the axes of a random orthonormal basis
    Pairwise distances are distance * sqrt(2) (different axes) or 2 * distance (same axis)
    :return: (nClasses, dim) centroids
    """
    if nClasses > 2 * dim:
        raise ConfigError('Cannot place {} separated centroids in {} dimensions, feature_dim must be at least {}'.format(
            nClasses, dim, math.ceil(nClasses / 2)), key='feature_dim')
    basis = _orthogonal(dim, rng)
    centroids = np.zeros((nClasses, dim))
    for c in range(nClasses):
        sign = 1.0 if c < dim else -1.0
        centroids[c] = sign * distance * basis[c % dim]
    return centroids


def _complement(centroids: np.ndarray, dim: int) -> np.ndarray:
    """
    :return: (dim - rank, dim) orthonormal rows spanning the orthogonal complement of the centroid span
    """
    _, singular, vt = np.linalg.svd(centroids, full_matrices=True)
    rank = int((singular > 1e-9 * max(1.0, float(singular.max(initial=0.0)))).sum())
    return vt[rank:]


def make_view_transforms(config: GeneratorConfig, rng: np.random.Generator,
                         centroids: Optional[np.ndarray] = None) -> List[ViewTransform]:
    """
    View 0 is the identity, other views get an orthogonal map and a shift of norm view_shift * sigma
    orthogonal: random orthogonal map of the whole space, shift in a random direction
    nuisance:   orthogonal map that fixes the centroid span and rotates its complement, shift inside
                the complement, so every view carries the same class geometry displaced off the class subspace
    identity:   no view effect
    """
    dim = config.spec.feature_dim
    transforms = [ViewTransform(np.eye(dim), np.zeros(dim))]
    if config.view_mode == 'nuisance':
        if centroids is None:
            raise ConfigError('nuisance views need the class centroids', key='view_mode')
        complement = _complement(centroids, dim)
        if complement.shape[0] == 0:
            raise ConfigError('nuisance views need feature_dim > number of classes, got {}'.format(dim),
                              key='feature_dim')
        fixed = np.eye(dim) - complement.T @ complement
        for _ in range(1, config.spec.K):
            direction = rng.standard_normal(complement.shape[0])
            direction /= np.linalg.norm(direction)
            rotation = fixed + complement.T @ _orthogonal(complement.shape[0], rng) @ complement
            transforms.append(ViewTransform(rotation, complement.T @ direction * config.view_shift * config.sigma))
        return transforms

    for _ in range(1, config.spec.K):
        if config.view_mode == 'identity':
            transforms.append(ViewTransform(np.eye(dim), np.zeros(dim)))
            continue
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        transforms.append(ViewTransform(_orthogonal(dim, rng), direction * config.view_shift * config.sigma))
    return transforms


def build_geometry(config: GeneratorConfig, seed: int):
    """
    :return: (centroids, view transforms), a pure function of (config, seed)
    """
    rng = np.random.default_rng([int(seed), 0])
    centroids = place_centroids(config.spec.n_classes, config.spec.feature_dim,
                                config.class_separation * config.sigma, rng)
    return centroids, make_view_transforms(config, rng, centroids)


def nearest_centroid_accuracy(examples: List[Example], centroids: np.ndarray,
                              transforms: List[ViewTransform]) -> float:
    """
    Accuracy of assigning each example to its nearest generating centroid after undoing its view
    """
    if len(examples) == 0:
        return float('nan')
    correct = 0
    for example in examples:
        latent = transforms[example.view].invert(example.features).mean(axis=0)
        distances = np.linalg.norm(centroids - latent, axis=1)
        correct += int(np.argmin(distances) == example.label)
    return correct / len(examples)


# GENERATION ---------------------------------------------------------------------------------------

def generate(config: GeneratorConfig, seed: int) -> Dataset:
    """
    Generates a balanced dataset: n_per_class samples per class spread evenly over the K views,
    split per class into train and test
    :param config: GeneratorConfig
    :param seed: generation seed
    :return: Dataset
    """
    config.validate()
    spec = config.spec
    centroids, transforms = build_geometry(config, seed)
    rng = np.random.default_rng([int(seed), 1])

    # (class, view) cells: samples per view, and how many of them are held out
    cellSizes = [config.n_per_class // spec.K + (1 if view < config.n_per_class % spec.K else 0)
                 for view in range(spec.K)]
    cellTests = [int(round(size * config.holdout_fraction)) for size in cellSizes]
    if any(size - nTest < 1 for size, nTest in zip(cellSizes, cellTests)):
        raise ConfigError('n_per_class {} with holdout_fraction {} leaves a (class, view) cell without training '
                          'examples'.format(config.n_per_class, config.holdout_fraction), key='n_per_class')

    train, test = [], []
    for classId in range(spec.n_classes):
        status = LABELED if classId < spec.L else UNLABELED
        for view in range(spec.K):
            noise = rng.standard_normal((cellSizes[view], spec.seq_len, spec.feature_dim)) * config.sigma
            samples = transforms[view].apply(centroids[classId] + noise)
            for index, features in enumerate(samples):
                example = Example(features=features, status=status, label=classId, view=view)
                (test if index < cellTests[view] else train).append(example)

    provenance = {'config': config.toDict(),
                  'seed': int(seed),
                  'oracle_accuracy': nearest_centroid_accuracy(test, centroids, transforms),
                  'obfuscated': []}
    dataset = Dataset(spec, train, test, provenance, centroids, transforms)

    if config.hidden_labeled_views:
        dataset = obfuscate_views(dataset, LABELED, config.hidden_labeled_views)
    if config.hidden_unlabeled_views:
        dataset = obfuscate_views(dataset, UNLABELED, config.hidden_unlabeled_views)

    logger.info('Generated %d train / %d test examples (L=%d, U=%d, K=%d), nearest-centroid oracle %.4f',
                len(dataset.train), len(dataset.test), spec.L, spec.U, spec.K, provenance['oracle_accuracy'])
    return dataset


def obfuscate_views(dataset: Dataset, split: str, hidden_views) -> Dataset:
    """
    Removes training examples of one split whose view is hidden, the test split is untouched
    :param dataset: Dataset
    :param split: 'labeled' or 'unlabeled'
    :param hidden_views: view ids to remove
    :return: new Dataset
    """
    if split not in STATUSES:
        raise ConfigError('split must be one of {}, got {!r}'.format(sorted(STATUSES), split), key='split')
    hidden = set(int(view) for view in hidden_views)
    if any(not 0 <= view < dataset.spec.K for view in hidden):
        raise ConfigError('hidden views must be in [0, {}), got {}'.format(dataset.spec.K, sorted(hidden)),
                          key='hidden_views')
    if not hidden:
        return dataset

    train = [example for example in dataset.train if not (example.status == split and example.view in hidden)]

    before = set(example.label for example in dataset.train if example.status == split)
    after = set(example.label for example in train if example.status == split)
    if before != after:
        raise DataError('Hiding views {} of the {} split empties classes {}'.format(
            sorted(hidden), split, sorted(before - after)))

    provenance = dict(dataset.provenance)
    provenance['obfuscated'] = list(provenance.get('obfuscated', [])) + [{'split': split,
                                                                          'hidden_views': sorted(hidden)}]
    return replace(dataset, train=train, provenance=provenance)


# FILES --------------------------------------------------------------------------------------------

def _header(width: int, prefix: str) -> List[str]:
    return FIXED_COLUMNS + ['{}{}'.format(prefix, i) for i in range(width)]


def write_rows(path, rows, width: int, prefix: str):
    """
    Writes (status, label, view, values) rows as CSV
    """
    path = pathlib.Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(_header(width, prefix))
        for status, label, view, values in rows:
            writer.writerow([status, label, view] + [format_float(value) for value in values])


def read_rows(path, width: Optional[int], prefix: str):
    """
    Reads a CSV written by write_rows
    :param width: number of value columns, None takes it from the header
    :return: list of (status, label, view, values ndarray)
    """
    path = pathlib.Path(path)
    rows = []
    with open(path, 'r', encoding='utf-8', newline='') as file:
        reader = csv.reader(file)
        header = next(reader, None)
        if width is None:
            width = max(len(header or []) - len(FIXED_COLUMNS), 1)
        if header != _header(width, prefix):
            raise ParseError('header does not match {},{}0..{}{}'.format(','.join(FIXED_COLUMNS), prefix, prefix,
                                                                         width - 1),
                             lineNumber=1, path=str(path))
        for record in reader:
            lineNumber = reader.line_num
            if len(record) != len(header):
                raise ParseError('expected {} fields, got {}'.format(len(header), len(record)),
                                 lineNumber=lineNumber, path=str(path))
            status = record[0]
            if status not in STATUSES:
                raise ParseError('invalid status {!r}'.format(status), lineNumber=lineNumber, path=str(path))
            try:
                label = int(record[1])
                view = int(record[2])
                values = np.array([float(value) for value in record[3:]], dtype=np.float64)
            except ValueError as e:
                raise ParseError(str(e), lineNumber=lineNumber, path=str(path))
            rows.append((status, label, view, values))
    return rows


def _examplesToRows(examples: List[Example]):
    return [(example.status, example.label, example.view, np.asarray(example.features).reshape(-1))
            for example in examples]


def save(dataset: Dataset, path):
    """
    Writes train.csv, test.csv and provenance.yaml into the directory path
    """
    path = pathlib.Path(path)
    path.mkdir(parents=True, exist_ok=True)
    width = dataset.spec.input_dim
    write_rows(path / TRAIN_FILE, _examplesToRows(dataset.train), width, 'f')
    write_rows(path / TEST_FILE, _examplesToRows(dataset.test), width, 'f')
    dump_yaml(dataset.provenance, path / PROVENANCE_FILE)


def load(path) -> Dataset:
    """
    Reads a dataset directory written by save
    """
    path = pathlib.Path(path)
    provenanceFile = path / PROVENANCE_FILE
    if not provenanceFile.exists():
        raise FileNotFoundError('\"{}\" does not exist'.format(provenanceFile))
    provenance = load_yaml(provenanceFile)
    try:
        config = GeneratorConfig.fromDict(provenance['config'])
        seed = int(provenance['seed'])
    except (KeyError, TypeError) as e:
        raise ParseError('provenance is missing {}'.format(e), path=str(provenanceFile))
    spec = config.spec

    def toExamples(fileName):
        examples = []
        for lineIndex, (status, label, view, values) in enumerate(read_rows(path / fileName, spec.input_dim, 'f')):
            if not 0 <= view < spec.K:
                raise ParseError('view {} outside [0, {})'.format(view, spec.K), lineNumber=lineIndex + 2,
                                 path=str(path / fileName))
            examples.append(Example(values.reshape(spec.feature_shape), status, label, view))
        return examples

    centroids, transforms = build_geometry(config, seed)
    return Dataset(spec, toExamples(TRAIN_FILE), toExamples(TEST_FILE), provenance, centroids, transforms)
