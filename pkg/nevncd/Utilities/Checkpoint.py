"""
Checkpoint text format
A checkpoint is one YAML document: config hash, epoch counters, dataset spec, architecture, every parameter
as a shape plus a space-separated list of 17-significant-digit decimals, optimizer states and the epoch records
written so far
"""

import logging
import pathlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import torch

from nevncd.Core import DatasetSpec, ParseError, ShapeError
from nevncd.Model import NcdNetwork
from nevncd.Utilities.TextIO import dump_yaml, format_float, load_yaml

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
TENSOR_KEY = 'tensor'


@dataclass
class Checkpoint:
    config_hash: str
    epoch: int
    n_ep: int
    spec: DatasetSpec
    architecture: dict
    params: 'OrderedDict[str, torch.Tensor]'
    optimizers: Dict[str, dict] = field(default_factory=dict)
    records: List[dict] = field(default_factory=list)


def encode_tensor(tensor: torch.Tensor) -> dict:
    values = tensor.detach().reshape(-1).tolist()
    return {TENSOR_KEY: str(tensor.dtype).replace('torch.', ''),
            'shape': list(tensor.shape),
            'values': ' '.join(format_float(value) for value in values)}


def decode_tensor(data: dict) -> torch.Tensor:
    dtype = getattr(torch, data[TENSOR_KEY])
    values = [float(value) for value in str(data['values']).split()]
    return torch.tensor(np.array(values, dtype=np.float64), dtype=dtype).reshape(data['shape'])


def _encode(value):
    """
    Recursively turns tensors inside plain data (optimizer state dicts) into text records
    """
    if isinstance(value, torch.Tensor):
        return encode_tensor(value)
    if isinstance(value, dict):
        return {key: _encode(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(item) for item in value]
    return value


def _decode(value):
    if isinstance(value, dict):
        if TENSOR_KEY in value:
            return decode_tensor(value)
        return {key: _decode(item) for key, item in value.items()}
    if isinstance(value, list):
        return [_decode(item) for item in value]
    return value


def save(path, network: NcdNetwork, config_hash: str, epoch: int, n_ep: int, optimizers=None, records=None):
    """
    Writes a checkpoint
    :param path: destination file
    :param network: NcdNetwork
    :param config_hash: content hash of the run configuration
    :param epoch: completed epochs
    :param n_ep: schedule counter to resume with
    :param optimizers: name -> optimizer state_dict
    :param records: epoch records written so far
    """
    data = {'format': FORMAT_VERSION,
            'config_hash': config_hash,
            'epoch': int(epoch),
            'n_ep': int(n_ep),
            'spec': network.spec.toDict(),
            'architecture': network.architecture(),
            'params': {name: encode_tensor(value) for name, value in network.state_dict().items()},
            'optimizers': {name: _encode(state) for name, state in (optimizers or {}).items()},
            'records': list(records or [])}
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_yaml(data, path)
    logger.debug('Checkpoint at epoch %d written to %s', epoch, path)


def load(path) -> Checkpoint:
    """
    Reads a checkpoint written by save
    """
    path = pathlib.Path(path)
    data = load_yaml(path)
    try:
        params = OrderedDict((name, decode_tensor(value)) for name, value in data['params'].items())
        return Checkpoint(config_hash=data['config_hash'],
                          epoch=int(data['epoch']),
                          n_ep=int(data['n_ep']),
                          spec=DatasetSpec.fromDict(data['spec']),
                          architecture=dict(data['architecture']),
                          params=params,
                          optimizers={name: _decode(state) for name, state in (data.get('optimizers') or {}).items()},
                          records=list(data.get('records') or []))
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ParseError('malformed checkpoint: {}'.format(e), path=str(path))


def restore_network(checkpoint: Checkpoint) -> NcdNetwork:
    """
    Rebuilds the network of a checkpoint, rejecting parameters whose shapes do not match the architecture
    """
    architecture = checkpoint.architecture
    network = NcdNetwork(checkpoint.spec, architecture['widths'], architecture['embed_dim'],
                         architecture['disc_widths'])
    expected = network.state_dict()
    if set(expected) != set(checkpoint.params):
        raise ShapeError('checkpoint parameters {} do not match the network parameters {}'.format(
            sorted(checkpoint.params), sorted(expected)))
    for name, value in checkpoint.params.items():
        if tuple(value.shape) != tuple(expected[name].shape):
            raise ShapeError('checkpoint parameter {}'.format(name), expected=expected[name].shape,
                             actual=value.shape)
    network.load_state_dict(checkpoint.params)
    return network
