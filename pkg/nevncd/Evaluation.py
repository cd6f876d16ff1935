"""
Evaluation of a trained network: ACR on labeled classes, Hungarian-matched ACC on the novel classes,
silhouette of the embedding space, the confusion matrix and embedding export
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import pairwise_distances

from nevncd.Core import (LABELED, UNLABELED, DataError, Example, Hyperparams, LabelError, NumericError, ShapeError,
                         stack_features)
from nevncd.Model import NcdNetwork, forward
from nevncd.SynthData import read_rows, write_rows

logger = logging.getLogger(__name__)

EMBEDDING_PREFIX = 'z'


@dataclass
class EvalReport:
    """
    acr          - top-1 accuracy over labeled test examples (None if there are none)
    acc          - matched clustering accuracy over unlabeled test examples under the full-head argmax,
                   predictions into labeled heads count as misses (None if there are none)
    permutation  - predicted unlabeled head id -> ground-truth unlabeled class id
    silhouette   - silhouette of the test embeddings under ground-truth classes
    confusion    - (L + U, L + U) counts, rows ground truth, columns full-head argmax
    acc_by_view  - matched accuracy of the unlabeled test examples of each view, same permutation
    """
    acr: Optional[float]
    acc: Optional[float]
    permutation: Dict[int, int]
    silhouette: Optional[float]
    confusion: np.ndarray
    acc_by_view: Dict[int, float] = field(default_factory=dict)
    n_labeled: int = 0
    n_unlabeled: int = 0

    def toDict(self):
        return {'acr': self.acr,
                'acc': self.acc,
                'permutation': {int(key): int(value) for key, value in self.permutation.items()},
                'silhouette': self.silhouette,
                'confusion': np.asarray(self.confusion).astype(int).tolist(),
                'acc_by_view': {int(key): float(value) for key, value in self.acc_by_view.items()},
                'n_labeled': self.n_labeled,
                'n_unlabeled': self.n_unlabeled}

    @classmethod
    def fromDict(cls, data):
        return cls(acr=data['acr'],
                   acc=data['acc'],
                   permutation={int(key): int(value) for key, value in data['permutation'].items()},
                   silhouette=data['silhouette'],
                   confusion=np.array(data['confusion'], dtype=np.int64),
                   acc_by_view={int(key): float(value) for key, value in data.get('acc_by_view', {}).items()},
                   n_labeled=int(data.get('n_labeled', 0)),
                   n_unlabeled=int(data.get('n_unlabeled', 0)))


# MATCHING -----------------------------------------------------------------------------------------

def hungarian_assignment(cost):
    """
    Minimum-cost perfect matching of a square cost matrix
    :param cost: (U, U) finite real matrix
    :return: (permutation, total) with permutation[row] = column
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ShapeError('hungarian_assignment: cost matrix must be square, got shape {}'.format(cost.shape))
    if not np.isfinite(cost).all():
        raise NumericError('hungarian_assignment: cost matrix contains non-finite values')

    rows, columns = linear_sum_assignment(cost)
    permutation = np.empty(cost.shape[0], dtype=np.int64)
    permutation[rows] = columns
    total = float(cost[rows, columns].sum())

    identity = float(np.trace(cost))
    if total > identity + 1e-9 * max(1.0, abs(identity)):
        raise NumericError('hungarian_assignment: matching cost {} exceeds the identity cost {}'.format(total, identity))
    return permutation, total


def _checkIds(ids: np.ndarray, low: int, high: int, name: str):
    outside = ids[(ids < low) | (ids >= high)]
    if outside.size > 0:
        raise LabelError('{} must be in [{}, {}), got {}'.format(name, low, high, sorted(set(outside.tolist()))))


def _pair(predictions, truths, name):
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    truths = np.asarray(truths, dtype=np.int64).reshape(-1)
    if predictions.size != truths.size:
        raise ShapeError('{}: predictions and truths differ in length'.format(name), expected=truths.shape,
                         actual=predictions.shape)
    if truths.size == 0:
        raise DataError('{}: no examples to score'.format(name))
    return predictions, truths


def contingency(predictions, truths, L: int, U: int) -> np.ndarray:
    """
    :return: (U, U) counts, rows predicted unlabeled head, columns ground-truth unlabeled class
    """
    counts = np.zeros((U, U), dtype=np.int64)
    np.add.at(counts, (predictions - L, truths - L), 1)
    return counts


def acc(predictions, truths, L: int, U: int):
    """
    Clustering accuracy: best matched fraction over all bijections between predicted heads and classes
    :param predictions: unlabeled-head argmax ids in [L, L + U)
    :param truths: ground-truth ids in [L, L + U)
    :return: (fraction, permutation dict predicted id -> ground-truth id)
    """
    predictions, truths = _pair(predictions, truths, 'acc')
    _checkIds(predictions, L, L + U, 'acc predictions')
    _checkIds(truths, L, L + U, 'acc truths')

    counts = contingency(predictions, truths, L, U)
    permutation, total = hungarian_assignment(-counts)
    mapping = {L + head: L + int(permutation[head]) for head in range(U)}
    return -total / truths.size, mapping


def acr(predictions, truths, L: int) -> float:
    """
    Top-1 accuracy over labeled examples
    :param predictions: labeled-head argmax ids
    :param truths: ground-truth ids in [0, L)
    """
    predictions, truths = _pair(predictions, truths, 'acr')
    _checkIds(truths, 0, L, 'acr truths')
    return float((predictions == truths).mean())


# EMBEDDING STRUCTURE ------------------------------------------------------------------------------

def silhouette(embeddings, labels) -> float:
    """
    Mean of (b - a) / max(a, b) over all points, on L2-normalized embeddings with Euclidean distance
    a: mean distance to the members of the point's class (the class mean includes the point itself)
    b: smallest mean distance to the members of another class
    Members of single-point classes score 0
    :param embeddings: (N, D)
    :param labels: (N,) class ids
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if embeddings.ndim != 2 or embeddings.shape[0] != labels.size:
        raise ShapeError('silhouette: one label per embedding row', expected=(labels.size, -1),
                         actual=embeddings.shape)
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if classes.size < 2:
        raise DataError('silhouette needs at least 2 classes, got {}'.format(classes.size))
    singletons = classes[counts == 1].tolist()
    if singletons:
        logger.warning('silhouette: classes %s have a single member, those points score 0', singletons)

    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    normalized = embeddings / np.maximum(norms, 1e-12)
    distances = pairwise_distances(normalized, metric='euclidean')

    membership = np.zeros((labels.size, classes.size))
    membership[np.arange(labels.size), inverse] = 1.0
    means = distances @ membership / counts

    rows = np.arange(labels.size)
    a = means[rows, inverse]
    means[rows, inverse] = np.inf
    b = means.min(axis=1)

    denominator = np.maximum(a, b)
    scores = np.where(denominator > 0, (b - a) / np.where(denominator > 0, denominator, 1.0), 0.0)
    scores[counts[inverse] == 1] = 0.0
    return float(scores.mean())


# NETWORK EVALUATION -------------------------------------------------------------------------------

def predict(params: NcdNetwork, examples: Sequence[Example], hyper: Hyperparams):
    """
    :return: (embeddings, y_hat) as numpy arrays
    """
    with torch.no_grad():
        output = forward(params, stack_features(examples), hyper)
    return output.z.numpy(), output.y_hat.numpy()


def novel_accuracy(y_hat, truths, L: int, U: int):
    """
    Matched accuracy of unlabeled examples under the full-head argmax
    An example whose argmax is a labeled head counts as unmatched, the permutation is fitted on
    the examples that land on unlabeled heads.
    :param y_hat: (N, L + U) predictions of unlabeled examples
    :param truths: (N,) ground-truth ids in [L, L + U)
    :return: (fraction over all N, permutation, (N,) mapped ids with -1 for labeled-head predictions)
    """
    predictions = np.asarray(y_hat).argmax(axis=1)
    truths = np.asarray(truths, dtype=np.int64)
    onNovel = predictions >= L
    mapped = np.full(truths.size, -1, dtype=np.int64)
    if not onNovel.any():
        return 0.0, {L + head: L + head for head in range(U)}, mapped

    matched, permutation = acc(predictions[onNovel], truths[onNovel], L, U)
    mapped[onNovel] = [permutation[int(prediction)] for prediction in predictions[onNovel]]
    fraction = matched * onNovel.sum() / truths.size
    if not onNovel.all():
        logger.debug('%d of %d unlabeled examples predicted into labeled heads', int((~onNovel).sum()), truths.size)
    return float(fraction), permutation, mapped


def evaluate(params: NcdNetwork, examples: Sequence[Example], hyper: Hyperparams) -> EvalReport:
    """
    Scores a network on a test split whose examples all carry their ground-truth ids
    :param params: NcdNetwork
    :param examples: test examples
    :param hyper: Hyperparams (forward settings)
    :return: EvalReport
    """
    spec = params.spec
    L, U = spec.L, spec.U
    examples = list(examples)
    if any(example.label is None for example in examples):
        raise DataError('evaluate needs ground-truth ids on every example')

    z, y_hat = predict(params, examples, hyper)
    truths = np.array([example.label for example in examples], dtype=np.int64)
    views = np.array([example.view for example in examples], dtype=np.int64)
    isLabeled = np.array([example.status == LABELED for example in examples])
    isUnlabeled = np.array([example.status == UNLABELED for example in examples])

    confusion = np.zeros((spec.n_classes, spec.n_classes), dtype=np.int64)
    _checkIds(truths, 0, spec.n_classes, 'test labels')
    np.add.at(confusion, (truths, y_hat.argmax(axis=1)), 1)

    acrValue = None
    if isLabeled.any():
        acrValue = acr(y_hat[isLabeled, :L].argmax(axis=1), truths[isLabeled], L)

    accValue, permutation, byView = None, {}, {}
    if isUnlabeled.any():
        accValue, permutation, mapped = novel_accuracy(y_hat[isUnlabeled], truths[isUnlabeled], L, U)
        novelTruths = truths[isUnlabeled]
        novelViews = views[isUnlabeled]
        for view in np.unique(novelViews):
            inView = novelViews == view
            byView[int(view)] = float((mapped[inView] == novelTruths[inView]).mean())

    silhouetteValue = None
    if np.unique(truths).size >= 2:
        silhouetteValue = silhouette(z, truths)

    return EvalReport(acr=acrValue,
                      acc=accValue,
                      permutation=permutation,
                      silhouette=silhouetteValue,
                      confusion=confusion,
                      acc_by_view=byView,
                      n_labeled=int(isLabeled.sum()),
                      n_unlabeled=int(isUnlabeled.sum()))


# EMBEDDING FILES ----------------------------------------------------------------------------------

def export_embeddings(params: NcdNetwork, examples: Sequence[Example], hyper: Hyperparams, path):
    """
    Writes one CSV row per example: status,label,view,z0..z{d-1}
    """
    z, _ = predict(params, examples, hyper)
    rows = [(example.status, example.label, example.view, embedding) for example, embedding in zip(examples, z)]
    write_rows(path, rows, params.embed_dim, EMBEDDING_PREFIX)
    logger.info('Wrote %d embeddings to %s', len(rows), path)


def load_embeddings(path):
    """
    Reads an embedding CSV written by export_embeddings
    :return: (statuses, labels, views, embeddings (N, D))
    """
    rows = read_rows(path, None, EMBEDDING_PREFIX)
    if not rows:
        raise DataError('{} holds no embeddings'.format(path))
    statuses: List[str] = [row[0] for row in rows]
    labels = np.array([row[1] for row in rows], dtype=np.int64)
    views = np.array([row[2] for row in rows], dtype=np.int64)
    embeddings = np.stack([row[3] for row in rows])
    return statuses, labels, views, embeddings
