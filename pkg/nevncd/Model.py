"""
Network f -> h -> g = [l | u] and the view discriminator f_d
"""

import math
from collections import OrderedDict
from typing import Iterable, List, Sequence

import numpy as np
import torch
from torch import nn

from nevncd.Core import (DTYPE, ConfigError, DatasetSpec, ForwardOutput, Hyperparams, NumericError, ShapeError,
                         as_tensor, sharpen, softmax)
from nevncd.Utilities.Tools import ALL, DISCRIMINATOR, PARTITIONS

DEFAULT_WIDTHS = (64,)
DEFAULT_EMBED_DIM = 32
DEFAULT_DISC_WIDTHS = (32,)


class NcdNetwork(nn.Module):
    """
    All trainable weights of the encoder f, embedding h, classification head g and discriminator f_d
    The first L head columns form the labeled head, the last U the unlabeled head
    """

    def __init__(self, spec: DatasetSpec, widths: Sequence[int] = DEFAULT_WIDTHS,
                 embed_dim: int = DEFAULT_EMBED_DIM, disc_widths: Sequence[int] = DEFAULT_DISC_WIDTHS):
        super(NcdNetwork, self).__init__()

        self.spec = spec
        self.widths = tuple(int(width) for width in widths)
        self.embed_dim = int(embed_dim)
        self.disc_widths = tuple(int(width) for width in disc_widths)

        # encoder f: dense stack with ReLU over the flattened input
        layers = []
        inputs = spec.input_dim
        for width in self.widths:
            layers += [nn.Linear(inputs, width, dtype=DTYPE), nn.ReLU()]
            inputs = width
        self.encoder = nn.Sequential(*layers)

        # embedding h
        self.embedding = nn.Sequential(nn.Linear(inputs, self.embed_dim, dtype=DTYPE), nn.ReLU())

        # head g = [l | u]
        self.head = nn.Linear(self.embed_dim, spec.n_classes, dtype=DTYPE)

        # discriminator f_d over the embedding
        layers = []
        inputs = self.embed_dim
        for width in self.disc_widths:
            layers += [nn.Linear(inputs, width, dtype=DTYPE), nn.ReLU()]
            inputs = width
        layers.append(nn.Linear(inputs, spec.K, dtype=DTYPE))
        self.discriminator = nn.Sequential(*layers)

    def architecture(self):
        return {'widths': list(self.widths),
                'embed_dim': self.embed_dim,
                'disc_widths': list(self.disc_widths)}

    def partitionNames(self, partition: str) -> List[str]:
        """
        :param partition: 'encoder' (f, h, g), 'discriminator' (f_d) or 'all'
        :return: parameter names of the partition
        """
        if partition not in PARTITIONS:
            raise ConfigError('Unknown parameter partition {!r}'.format(partition))
        names = []
        for name, _ in self.named_parameters():
            isDiscriminator = name.startswith('discriminator.')
            if partition == ALL or (partition == DISCRIMINATOR) == isDiscriminator:
                names.append(name)
        return names

    def partitionParameters(self, partition: str) -> List[nn.Parameter]:
        parameters = dict(self.named_parameters())
        return [parameters[name] for name in self.partitionNames(partition)]


class GradientBundle:
    """
    One gradient tensor per network parameter, keyed and shaped like the parameters
    """

    def __init__(self, grads: 'OrderedDict[str, torch.Tensor]'):
        self.grads = grads

    def __getitem__(self, name):
        return self.grads[name]

    def __add__(self, other: 'GradientBundle') -> 'GradientBundle':
        return GradientBundle(OrderedDict((name, grad + other.grads[name]) for name, grad in self.grads.items()))

    def scaled(self, factor: float) -> 'GradientBundle':
        return GradientBundle(OrderedDict((name, grad * factor) for name, grad in self.grads.items()))

    def names(self):
        return list(self.grads.keys())

    def items(self):
        return self.grads.items()

    def flatten(self) -> np.ndarray:
        return np.concatenate([grad.detach().reshape(-1).numpy() for grad in self.grads.values()])

    def isZero(self, partition_names: Iterable[str]) -> bool:
        return all(bool((self.grads[name] == 0).all()) for name in partition_names)


def init_params(spec: DatasetSpec, widths: Sequence[int], seed: int, embed_dim: int = DEFAULT_EMBED_DIM,
                disc_widths: Sequence[int] = DEFAULT_DISC_WIDTHS) -> NcdNetwork:
    """
    Builds the network with weights ~ N(0, 1 / fan_in) and zero biases
    :param spec: DatasetSpec
    :param widths: encoder layer widths, non-empty
    :param seed: initialization seed
    :param embed_dim: embedding width
    :param disc_widths: hidden widths of the discriminator, may be empty
    :return: NcdNetwork
    """
    widths = list(widths)
    if len(widths) == 0:
        raise ConfigError('widths must not be empty', key='widths')
    for name, values in (('widths', widths), ('embed_dim', [embed_dim]), ('disc_widths', list(disc_widths))):
        if any(int(width) < 1 for width in values):
            raise ConfigError('{} contains a zero-width layer: {}'.format(name, values), key=name)

    network = NcdNetwork(spec, widths, embed_dim, disc_widths)

    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for module in network.modules():
            if isinstance(module, nn.Linear):
                scale = 1.0 / math.sqrt(module.in_features)
                module.weight.copy_(torch.randn(module.weight.shape, generator=generator, dtype=DTYPE) * scale)
                module.bias.zero_()

    return network


def forward(params: NcdNetwork, features, hyper: Hyperparams) -> ForwardOutput:
    """
    y_hat = softmax(g(h(f(x)))), y_tilde = sharpened unlabeled slice
    :param params: NcdNetwork
    :param features: (seq_len, feature_dim) for one example or (N, seq_len, feature_dim) for a batch
    :param hyper: Hyperparams (sr, sharpen_mode)
    :return: ForwardOutput, unbatched when a single example was given
    """
    spec = params.spec
    x = as_tensor(features)
    if x.dim() not in (2, 3) or tuple(x.shape[-2:]) != spec.feature_shape:
        raise ShapeError('forward: per-example feature shape mismatch', expected=spec.feature_shape,
                         actual=tuple(x.shape[-2:]) if x.dim() >= 2 else tuple(x.shape))
    single = x.dim() == 2
    if single:
        x = x.unsqueeze(0)

    z = params.embedding(params.encoder(x.reshape(x.shape[0], -1)))
    logits = params.head(z)
    y_hat = softmax(logits)
    if hyper.sharpen_mode == 'log':
        # softmax(log(y_hat_u) / sr) == softmax(logits_u / sr), the normalizer cancels
        y_tilde = softmax(logits[:, spec.L:], hyper.sr)
    else:
        y_tilde = sharpen(y_hat[:, spec.L:], hyper.sr, mode=hyper.sharpen_mode)

    if single:
        return ForwardOutput(z[0], logits[0], y_hat[0], y_tilde[0])
    return ForwardOutput(z, logits, y_hat, y_tilde)


def forward_discriminator(params: NcdNetwork, z) -> torch.Tensor:
    """
    :param z: embedding (embed_dim,) or batch (N, embed_dim)
    :return: view probabilities over K
    """
    z = as_tensor(z)
    if z.shape[-1] != params.embed_dim:
        raise ShapeError('forward_discriminator: embedding width mismatch', expected=(params.embed_dim,),
                         actual=tuple(z.shape[-1:]))
    if not bool(torch.isfinite(z).all()):
        raise NumericError('forward_discriminator: embedding contains non-finite values')
    return softmax(params.discriminator(z))


def backward(params: NcdNetwork, loss: torch.Tensor, partition: str = ALL, term: str = 'joint',
             retain_graph: bool = False) -> GradientBundle:
    """
    Reverse-mode gradient of a scalar loss
    Parameters outside the partition get exact zeros, so an update computed for one partition
    never moves the other
    :param params: NcdNetwork
    :param loss: scalar tensor built from a forward pass on params
    :param partition: 'encoder', 'discriminator' or 'all'
    :param term: loss name reported if a gradient is non-finite
    :param retain_graph: keep the graph for another backward call on the same loss
    :return: GradientBundle
    """
    names = params.partitionNames(partition)
    named = OrderedDict(params.named_parameters())
    targets = [named[name] for name in names]

    grads = [None] * len(targets)
    if isinstance(loss, torch.Tensor) and loss.requires_grad:
        grads = torch.autograd.grad(loss, targets, allow_unused=True, retain_graph=retain_graph)

    bundle = OrderedDict((name, torch.zeros_like(parameter)) for name, parameter in named.items())
    for name, grad in zip(names, grads):
        if grad is not None:
            if not bool(torch.isfinite(grad).all()):
                raise NumericError('Non-finite gradient for parameter {}'.format(name), term=term)
            bundle[name] = grad.detach()

    return GradientBundle(bundle)
