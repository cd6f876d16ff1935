"""
Core types and numeric primitives shared by every nevncd module
"""

from dataclasses import dataclass, asdict, replace
from typing import Optional, Tuple

import numpy as np
import torch

# every log is clamped at EPS
EPS = 1e-12
# norms below this cannot be used for cosine similarity
NORM_EPS = 1e-12
DTYPE = torch.float64

LABELED = 'labeled'
UNLABELED = 'unlabeled'
STATUSES = {LABELED, UNLABELED}

SHARPEN_MODES = {'log', 'prob'}


class Error(Exception):
    """
    Base Error Class
    """

    def __init__(self, message):
        super(Error, self).__init__(message)
        self.message = message


class ConfigError(Error):
    """
    Raised for invalid configuration values or unknown configuration keys
    """

    def __init__(self, message, key=None):
        super(ConfigError, self).__init__(message)
        self.key = key


class ShapeError(Error):
    """
    Raised when an array does not have the shape an operation expects
    """

    def __init__(self, message, expected=None, actual=None):
        if expected is not None:
            message = '{}: expected shape {}, got {}'.format(message, tuple(expected), tuple(actual))
        super(ShapeError, self).__init__(message)
        self.expected = expected
        self.actual = actual


class LabelError(Error):
    """
    Raised for a class id or view id outside of its allowed range
    """
    pass


class SamplingError(Error):
    """
    Raised when a batch violates the structure a loss or the sampler relies on
    """
    pass


class DataError(Error):
    """
    Raised for datasets that are inconsistent with their configuration
    """
    pass


class ParseError(DataError):
    """
    Raised for malformed dataset, embedding or checkpoint files
    """

    def __init__(self, message, lineNumber=None, path=None):
        if lineNumber is not None:
            message = '{}, line {}: {}'.format(path, lineNumber, message)
        elif path is not None:
            message = '{}: {}'.format(path, message)
        super(ParseError, self).__init__(message)
        self.lineNumber = lineNumber
        self.path = path


class NumericError(Error):
    """
    Raised for non-finite inputs, losses or gradients
    """

    def __init__(self, message, term=None, epoch=None, step=None):
        self.detail = message
        location = []
        if term is not None:
            location.append('term={}'.format(term))
        if epoch is not None:
            location.append('epoch={}'.format(epoch))
        if step is not None:
            location.append('step={}'.format(step))
        if location:
            message = '{} ({})'.format(message, ', '.join(location))
        super(NumericError, self).__init__(message)
        self.term = term
        self.epoch = epoch
        self.step = step


# DOMAIN TYPES -------------------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    """
    Label space and input geometry of a dataset
    Labeled ids are [0, L), unlabeled ids are [L, L + U)
    """
    L: int
    U: int
    K: int = 1
    feature_dim: int = 16
    seq_len: int = 1

    def __post_init__(self):
        for name in ('L', 'U', 'K', 'feature_dim', 'seq_len'):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError('{} must be a positive integer, got {!r}'.format(name, value), key=name)

    @property
    def n_classes(self) -> int:
        return self.L + self.U

    @property
    def input_dim(self) -> int:
        return self.seq_len * self.feature_dim

    @property
    def feature_shape(self) -> Tuple[int, int]:
        return self.seq_len, self.feature_dim

    def isLabeledId(self, classId: int) -> bool:
        return 0 <= classId < self.L

    def isUnlabeledId(self, classId: int) -> bool:
        return self.L <= classId < self.L + self.U

    def toDict(self):
        return asdict(self)

    @classmethod
    def fromDict(cls, data):
        return cls(**{key: int(value) for key, value in data.items()})


@dataclass
class Example:
    """
    One instance: features of shape (seq_len, feature_dim), labeled/unlabeled status,
    class id and view id
    For unlabeled examples the label is the hidden ground truth, used only by data generation
    and evaluation. stripped() hides it.
    """
    features: np.ndarray
    status: str
    label: Optional[int]
    view: int = 0

    def __post_init__(self):
        if self.status not in STATUSES:
            raise DataError('Invalid status {!r}, expected one of {}'.format(self.status, sorted(STATUSES)))

    @property
    def isLabeled(self) -> bool:
        return self.status == LABELED

    def stripped(self) -> 'Example':
        """
        :return: the example itself if labeled, otherwise a copy without its ground-truth id
        """
        if self.isLabeled:
            return self
        return replace(self, label=None)


@dataclass
class ForwardOutput:
    """
    Batched network outputs, one row per instance
    z       - embedding h(f(x))
    logits  - g(z), L + U wide
    y_hat   - softmax over all L + U heads
    y_tilde - sharpened distribution over the U unlabeled heads
    """
    z: torch.Tensor
    logits: torch.Tensor
    y_hat: torch.Tensor
    y_tilde: torch.Tensor


@dataclass
class Hyperparams:
    tau: float = 0.05
    sr: float = 0.1
    lambda_H: float = 1.0
    # None resolves to 10 * U
    batch_size_unlabeled: Optional[int] = None
    # None resolves to the unlabeled batch size
    batch_size_labeled: Optional[int] = None
    n_negatives: int = 8
    augment_strength: float = 0.1
    augment_dropout: float = 0.1
    sharpen_mode: str = 'log'
    cross_view: bool = False
    seed: int = 0

    def validate(self, spec: Optional[DatasetSpec] = None):
        if not self.tau > 0:
            raise ConfigError('tau must be > 0, got {}'.format(self.tau), key='tau')
        if not self.sr > 0:
            raise ConfigError('sr must be > 0, got {}'.format(self.sr), key='sr')
        if self.lambda_H < 0:
            raise ConfigError('lambda_H must be >= 0, got {}'.format(self.lambda_H), key='lambda_H')
        if self.n_negatives < 1:
            raise ConfigError('n_negatives must be >= 1, got {}'.format(self.n_negatives), key='n_negatives')
        if self.augment_strength < 0:
            raise ConfigError('augment_strength must be >= 0', key='augment_strength')
        if not 0 <= self.augment_dropout < 1:
            raise ConfigError('augment_dropout must be in [0, 1)', key='augment_dropout')
        if self.sharpen_mode not in SHARPEN_MODES:
            raise ConfigError('sharpen_mode must be one of {}, got {!r}'.format(sorted(SHARPEN_MODES),
                                                                                 self.sharpen_mode),
                              key='sharpen_mode')
        if spec is not None and self.unlabeledBatchSize(spec) < spec.U:
            raise ConfigError('batch_size_unlabeled must be >= U ({}), got {}'.format(
                spec.U, self.batch_size_unlabeled), key='batch_size_unlabeled')
        return self

    def unlabeledBatchSize(self, spec: DatasetSpec) -> int:
        if self.batch_size_unlabeled is None:
            return 10 * spec.U
        return int(self.batch_size_unlabeled)

    def labeledBatchSize(self, spec: DatasetSpec) -> int:
        if self.batch_size_labeled is None:
            return self.unlabeledBatchSize(spec)
        return int(self.batch_size_labeled)

    def toDict(self):
        return asdict(self)


# NUMERIC PRIMITIVES -------------------------------------------------------------------------------

def as_tensor(values) -> torch.Tensor:
    """
    Converts array-likes to float64 tensors, tensors are passed through with their graph intact
    """
    if isinstance(values, torch.Tensor):
        return values if values.dtype == DTYPE else values.to(DTYPE)
    return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)


def _checkFinite(values: torch.Tensor, name: str):
    if not bool(torch.isfinite(values).all()):
        raise NumericError('{}: input contains non-finite values'.format(name))


def softmax(v, temperature: float = 1.0) -> torch.Tensor:
    """
    Temperature softmax over the last axis
    torch.softmax subtracts the row maximum, so large inputs do not overflow
    :param v: real vector or batch of vectors
    :param temperature: positive real
    :return: probabilities, same shape as v
    """
    v = as_tensor(v)
    _checkFinite(v, 'softmax')
    if not temperature > 0:
        raise NumericError('softmax: temperature must be > 0, got {}'.format(temperature))
    return torch.softmax(v / temperature, dim=-1)


def sharpen(probs, sr: float, mode: str = 'log') -> torch.Tensor:
    """
    Sharpens a probability vector (or batch) toward one-hot
    log mode:  softmax(log(p) / sr), argmax preserving
    prob mode: softmax(p / sr), the literal re-softmax of probabilities
    :param probs: entries in (0, 1], zeros are clamped to EPS before the log
    :param sr: sharpening temperature
    :param mode: 'log' or 'prob'
    """
    probs = as_tensor(probs)
    if mode == 'log':
        return softmax(torch.log(torch.clamp(probs, min=EPS)), sr)
    elif mode == 'prob':
        return softmax(probs, sr)
    raise ConfigError('Unknown sharpen mode {!r}'.format(mode), key='sharpen_mode')


def cosine_similarity(a, b) -> torch.Tensor:
    """
    Cosine similarity along the last axis
    Rejects vectors with norm <= NORM_EPS
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError('cosine_similarity: dimension mismatch', expected=a.shape, actual=b.shape)
    normA = torch.linalg.vector_norm(a, dim=-1)
    normB = torch.linalg.vector_norm(b, dim=-1)
    if bool((normA <= NORM_EPS).any()) or bool((normB <= NORM_EPS).any()):
        raise NumericError('cosine_similarity: vector norm is below {}'.format(NORM_EPS))
    return (a * b).sum(dim=-1) / (normA * normB)


def normalize(z: torch.Tensor) -> torch.Tensor:
    """
    Row-wise L2 normalization used inside the losses
    An all-zero embedding (every ReLU unit off) maps to zero instead of failing
    """
    return torch.nn.functional.normalize(z, p=2.0, dim=-1, eps=NORM_EPS)


def stack_features(examples) -> np.ndarray:
    """
    Stacks example features into one (N, seq_len, feature_dim) array
    """
    if len(examples) == 0:
        raise DataError('Cannot stack features of an empty example list')
    return np.stack([np.asarray(example.features, dtype=np.float64) for example in examples])
