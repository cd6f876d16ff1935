"""
Seeded joint batch construction
Labeled/unlabeled mixing, contrastive query/positive/negative selection and augmentation
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from nevncd.Core import (LABELED, UNLABELED, ConfigError, DatasetSpec, Example, Hyperparams, LabelError,
                         SamplingError, stack_features)

logger = logging.getLogger(__name__)


def as_generator(rng: Union[int, Sequence[int], np.random.Generator]) -> np.random.Generator:
    """
    Accepts a Generator or a seed (int or sequence of ints)
    """
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass
class JointBatch:
    """
    labeled:             labeled examples
    labeled_targets:     (n_l, L) one-hot targets, row-aligned with labeled
    unlabeled:           unlabeled examples with their ground truth stripped
    unlabeled_augmented: (n_u, seq_len, feature_dim) augmented features, row-aligned with unlabeled
    contrast_category:   (query, positive, negatives) - query and positive index labeled,
                         negatives index the pool labeled + unlabeled
    contrast_instance:   (query, negatives) - query indexes unlabeled, negatives index labeled
    """
    labeled: List[Example]
    labeled_targets: np.ndarray
    unlabeled: List[Example]
    unlabeled_augmented: np.ndarray
    contrast_category: List[Tuple[int, int, List[int]]]
    contrast_instance: List[Tuple[int, List[int]]]

    def poolStatus(self, index: int) -> str:
        """
        :param index: index into the pool labeled + unlabeled
        :return: status of the pooled example
        """
        return LABELED if index < len(self.labeled) else UNLABELED

    @property
    def labeledIds(self) -> np.ndarray:
        return self.labeled_targets.argmax(axis=1)

    def labeledFeatures(self) -> np.ndarray:
        return stack_features(self.labeled)

    def unlabeledFeatures(self) -> np.ndarray:
        return stack_features(self.unlabeled)

    def views(self) -> np.ndarray:
        """
        :return: view ids of the pool labeled + unlabeled
        """
        return np.array([example.view for example in self.labeled + self.unlabeled], dtype=np.int64)


def augment(features, rng, strength: float, scale=None, dropout: float = 0.1) -> np.ndarray:
    """
    Additive Gaussian jitter with sigma = strength * scale, followed by coordinate dropout
    :param features: array of any shape
    :param rng: Generator or seed
    :param strength: jitter strength, 0 returns the input unchanged
    :param scale: per-coordinate feature std (broadcastable), defaults to the std of features
    :param dropout: probability of zeroing each coordinate
    :return: augmented copy
    """
    if strength < 0:
        raise ConfigError('augment strength must be >= 0, got {}'.format(strength), key='augment_strength')
    features = np.array(features, dtype=np.float64)
    if strength == 0:
        return features

    rng = as_generator(rng)
    if scale is None:
        scale = features.std()
    augmented = features + rng.standard_normal(features.shape) * (strength * np.asarray(scale))
    if dropout > 0:
        augmented[rng.random(features.shape) < dropout] = 0.0
    return augmented


class JointSampler:
    """
    Builds JointBatches from one training split
    Unlabeled examples are stored stripped, so no code path here can read their ground truth
    """

    def __init__(self, examples: Sequence[Example], spec: DatasetSpec, hyper: Hyperparams):
        self.spec = spec
        self.hyper = hyper.validate(spec)

        self.labeled = [example for example in examples if example.isLabeled]
        self.unlabeled = [example.stripped() for example in examples if not example.isLabeled]
        if len(self.labeled) == 0 or len(self.unlabeled) == 0:
            raise SamplingError('Joint batches need labeled and unlabeled examples, got {} labeled and {} '
                                'unlabeled'.format(len(self.labeled), len(self.unlabeled)))

        self.labeledIds = np.array([example.label for example in self.labeled], dtype=np.int64)
        if bool(((self.labeledIds < 0) | (self.labeledIds >= spec.L)).any()):
            raise LabelError('Labeled examples must carry ids in [0, {})'.format(spec.L))
        self.labeledViews = np.array([example.view for example in self.labeled], dtype=np.int64)

        # jitter scale of the augmentation
        self.featureScale = stack_features(list(self.labeled) + list(self.unlabeled)).std(axis=0)

        counts = np.bincount(self.labeledIds, minlength=spec.L)
        self.contrastClasses = set(int(c) for c in np.flatnonzero(counts >= 2))
        singletons = np.flatnonzero(counts == 1).tolist()
        if singletons:
            logger.warning('Labeled classes %s have a single example and are excluded from category contrast '
                           'queries', singletons)

    @staticmethod
    def _draw(rng: np.random.Generator, poolSize: int, count: int) -> np.ndarray:
        return rng.choice(poolSize, size=count, replace=poolSize < count)

    @staticmethod
    def _choose(rng: np.random.Generator, eligible: np.ndarray, count: int) -> List[int]:
        return [int(index) for index in rng.choice(eligible, size=count, replace=eligible.size < count)]

    def makeBatch(self, rng) -> JointBatch:
        """
        :param rng: Generator or seed, the only source of randomness
        :return: JointBatch
        """
        rng = as_generator(rng)
        hyper = self.hyper
        nUnlabeled = hyper.unlabeledBatchSize(self.spec)
        nLabeled = hyper.labeledBatchSize(self.spec)

        # labeled and unlabeled members ------------------------------------------------------
        labeledIndex = self._draw(rng, len(self.labeled), nLabeled)
        unlabeledIndex = self._draw(rng, len(self.unlabeled), nUnlabeled)
        labels = self.labeledIds[labeledIndex]
        views = self.labeledViews[labeledIndex]
        labeled = [self.labeled[i] for i in labeledIndex]
        unlabeled = [self.unlabeled[i] for i in unlabeledIndex]
        targets = np.eye(self.spec.L)[labels]

        augmented = np.stack([augment(example.features, rng, hyper.augment_strength, self.featureScale,
                                      hyper.augment_dropout)
                              for example in unlabeled])

        # category contrast: positives share the class, negatives from other classes or unlabeled
        unlabeledPool = nLabeled + np.arange(nUnlabeled)
        category = []
        for query in range(nLabeled):
            classId = int(labels[query])
            if classId not in self.contrastClasses:
                continue
            partners = np.flatnonzero((labels == classId) & (labeledIndex != labeledIndex[query]))
            if partners.size == 0:
                continue
            if hyper.cross_view:
                otherViews = partners[views[partners] != views[query]]
                if otherViews.size > 0:
                    partners = otherViews
            positive = int(rng.choice(partners))
            eligible = np.concatenate([np.flatnonzero(labels != classId), unlabeledPool])
            category.append((query, positive, self._choose(rng, eligible, hyper.n_negatives)))

        # instance contrast: negatives only from labeled data
        allLabeled = np.arange(nLabeled)
        instance = [(query, self._choose(rng, allLabeled, hyper.n_negatives)) for query in range(nUnlabeled)]

        return JointBatch(labeled=labeled,
                          labeled_targets=targets,
                          unlabeled=unlabeled,
                          unlabeled_augmented=augmented,
                          contrast_category=category,
                          contrast_instance=instance)


def make_joint_batch(dataset, hyper: Hyperparams, rng) -> JointBatch:
    """
    :param dataset: object with .train (Example list) and .spec (DatasetSpec), e.g. SynthData.Dataset
    :param hyper: Hyperparams
    :param rng: Generator or seed
    :return: JointBatch
    """
    return JointSampler(dataset.train, dataset.spec, hyper).makeBatch(rng)
