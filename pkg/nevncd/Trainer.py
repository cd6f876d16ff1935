"""
Single-stage joint optimization of the supervised and clustering objectives, with the optional
view-adversarial alternation, adaptive or fixed weight schedules, checkpoints and the epoch log
"""

import json
import logging
import math
import pathlib
import time
from dataclasses import dataclass, asdict, field, fields, replace
from typing import Dict, List, Optional

import numpy as np
import torch

from nevncd import Evaluation, Losses
from nevncd.Core import (LABELED, ConfigError, Hyperparams, NumericError, ShapeError)
from nevncd.Losses import LossBreakdown, LossWeights
from nevncd.Model import NcdNetwork, backward, forward, forward_discriminator
from nevncd.Sampler import JointBatch, JointSampler
from nevncd.Utilities import Checkpoint
from nevncd.Utilities.BatchThread import BatchSequence
from nevncd.Utilities.TextIO import content_hash
from nevncd.Utilities.Tools import (ADAM, ADAPTIVE, ADV, ADV_OFF, ADVERSARIAL_MODES, BALANCE, BATCHWISE, CE, CL,
                                    CL_CATEGORY, CL_INSTANCE, DISC, DISCRIMINATOR, ENCODER, ENTROPY, FIXED, JOINT,
                                    LOSS_TOGGLES, MSE, NL, OPTIMIZERS, SCHEDULE_MODES, SGD, VAR, VARIANCE_MODES)

logger = logging.getLogger(__name__)

# toggle -> LossWeights field it scales
TOGGLE_WEIGHTS = {CE: 'lambda_ce', CL: 'lambda_cl', NL: 'lambda_nl', ENTROPY: 'lambda_H', VAR: 'lambda_var'}
# TrainConfig fields that do not change the trajectory of the epochs they share
UNHASHED_FIELDS = ('epochs', 'checkpoint_every', 'eval_every', 'prefetch', 'threads')
CHECKPOINT_FILE = 'checkpoint.yaml'
LOG_FILE = 'trainlog.jsonl'


@dataclass
class TrainConfig:
    epochs: int = 30
    # None: enough steps to visit the unlabeled training split once
    steps_per_epoch: Optional[int] = None
    optimizer: str = ADAM
    lr: float = 1e-3
    momentum: float = 0.9
    betas: List[float] = field(default_factory=lambda: [0.9, 0.999])
    losses: List[str] = field(default_factory=lambda: list(LOSS_TOGGLES))
    variance_mode: str = BATCHWISE
    variance_unbiased: bool = True
    # weight of the head-balance term relative to lambda_var
    mu_balance: float = LossWeights.mu_balance
    adversarial: str = ADV_OFF
    lambda_adv: float = 0.1
    disc_steps_per_enc_step: int = 1
    # None: same as lr
    disc_lr: Optional[float] = None
    schedule: str = ADAPTIVE
    # cap on the growing adaptive weights, None for none
    lambda_max: Optional[float] = None
    # LossWeights fields for the fixed schedule
    fixed_weights: Dict[str, float] = field(default_factory=dict)
    seed: int = 0
    # 0: only the final checkpoint
    checkpoint_every: int = 0
    # 0: no evaluation snapshots during training
    eval_every: int = 1
    prefetch: bool = True
    threads: int = 1

    def validate(self):
        if self.epochs < 1:
            raise ConfigError('epochs must be >= 1, got {}'.format(self.epochs), key='epochs')
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError('steps_per_epoch must be >= 1', key='steps_per_epoch')
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError('optimizer must be one of {}, got {!r}'.format(OPTIMIZERS, self.optimizer),
                              key='optimizer')
        if not self.lr > 0:
            raise ConfigError('lr must be > 0, got {}'.format(self.lr), key='lr')
        if self.disc_lr is not None and not self.disc_lr > 0:
            raise ConfigError('disc_lr must be > 0, got {}'.format(self.disc_lr), key='disc_lr')
        if len(self.betas) != 2 or not all(0 <= beta < 1 for beta in self.betas):
            raise ConfigError('betas must be two values in [0, 1)', key='betas')
        unknown = [toggle for toggle in self.losses if toggle not in LOSS_TOGGLES]
        if unknown:
            raise ConfigError('Unknown loss toggles {}, expected a subset of {}'.format(unknown, LOSS_TOGGLES),
                              key='losses')
        if self.variance_mode not in VARIANCE_MODES:
            raise ConfigError('variance_mode must be one of {}'.format(VARIANCE_MODES), key='variance_mode')
        if self.adversarial not in ADVERSARIAL_MODES:
            raise ConfigError('adversarial must be one of {}'.format(ADVERSARIAL_MODES), key='adversarial')
        if self.mu_balance < 0:
            raise ConfigError('mu_balance must be >= 0', key='mu_balance')
        if self.lambda_adv < 0:
            raise ConfigError('lambda_adv must be >= 0', key='lambda_adv')
        if self.disc_steps_per_enc_step < 1:
            raise ConfigError('disc_steps_per_enc_step must be >= 1', key='disc_steps_per_enc_step')
        if self.schedule not in SCHEDULE_MODES:
            raise ConfigError('schedule must be one of {}'.format(SCHEDULE_MODES), key='schedule')
        weightNames = [item.name for item in fields(LossWeights) if item.name.startswith(('lambda_', 'mu_'))]
        unknown = [name for name in self.fixed_weights if name not in weightNames]
        if unknown:
            raise ConfigError('Unknown fixed weights {}, expected names from {}'.format(unknown, weightNames),
                              key='fixed_weights')
        if self.checkpoint_every < 0 or self.eval_every < 0:
            raise ConfigError('checkpoint_every and eval_every must be >= 0', key='checkpoint_every')
        if self.threads < 1:
            raise ConfigError('threads must be >= 1', key='threads')
        return self

    def toDict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    n_ep: int
    weights: dict
    losses: dict
    eval: Optional[dict] = None
    seconds: float = 0.0

    def toDict(self):
        return asdict(self)

    @classmethod
    def fromDict(cls, data):
        return cls(**data)


class TrainLog:
    """
    One EpochRecord per completed epoch, optionally streamed to a JSON-lines file as epochs finish
    """

    def __init__(self, records: Optional[List[EpochRecord]] = None, path=None):
        self.records = list(records or [])
        self.path = pathlib.Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, 'w', encoding='utf-8', newline='\n') as file:
                for record in self.records:
                    file.write(json.dumps(record.toDict(), sort_keys=True) + '\n')

    def append(self, record: EpochRecord):
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise ConfigError('epoch {} does not follow epoch {}'.format(record.epoch, self.records[-1].epoch))
        self.records.append(record)
        if self.path is not None:
            with open(self.path, 'a', encoding='utf-8', newline='\n') as file:
                file.write(json.dumps(record.toDict(), sort_keys=True) + '\n')

    def lossSequence(self) -> List[dict]:
        """
        Per-epoch losses and weights, without the wall-clock times
        """
        return [{'epoch': record.epoch, 'weights': record.weights, 'losses': record.losses}
                for record in self.records]

    def toDicts(self) -> List[dict]:
        return [record.toDict() for record in self.records]

    @classmethod
    def load(cls, path) -> 'TrainLog':
        with open(path, 'r', encoding='utf-8') as file:
            return cls([EpochRecord.fromDict(json.loads(line)) for line in file if line.strip()])

    def __len__(self):
        return len(self.records)


# WEIGHTS ------------------------------------------------------------------------------------------

def epoch_weights(config: TrainConfig, hyper: Hyperparams, n_ep: int) -> LossWeights:
    """
    Schedule weights for one epoch, zeroed for disabled loss toggles
    """
    if config.schedule == FIXED:
        given = dict(config.fixed_weights)
        given.setdefault('lambda_H', hyper.lambda_H)
        given.setdefault('lambda_adv', config.lambda_adv)
        given.setdefault('mu_balance', config.mu_balance)
        weights = Losses.fixed_weights(n_ep, given)
    else:
        weights = Losses.schedule_weights(n_ep, hyper.lambda_H, config.lambda_adv, config.lambda_max)
        weights = replace(weights, mu_balance=config.mu_balance)

    disabled = {TOGGLE_WEIGHTS[toggle]: 0.0 for toggle in LOSS_TOGGLES if toggle not in config.losses}
    if config.adversarial == ADV_OFF:
        disabled['lambda_adv'] = 0.0
    return replace(weights, **disabled)


def training_hash(dataset, network: NcdNetwork, config: TrainConfig, hyper: Hyperparams) -> str:
    """
    Content hash of everything that shapes a training trajectory
    """
    trainDict = {key: value for key, value in config.toDict().items() if key not in UNHASHED_FIELDS}
    provenance = getattr(dataset, 'provenance', {}) or {}
    return content_hash({'spec': dataset.spec.toDict(),
                         'data': {'config': provenance.get('config'), 'seed': provenance.get('seed'),
                                  'obfuscated': provenance.get('obfuscated')},
                         'architecture': network.architecture(),
                         'train': trainDict,
                         'hyper': hyper.toDict()})


# ONE STEP -----------------------------------------------------------------------------------------

def _gather(values: torch.Tensor, index) -> torch.Tensor:
    return values[torch.as_tensor(np.asarray(index, dtype=np.int64))]


def step_terms(network: NcdNetwork, batch: JointBatch, config: TrainConfig, hyper: Hyperparams):
    """
    Forward passes and the enabled loss terms of one joint batch
    :return: (terms dict, pooled embeddings of labeled + unlabeled members)
    """
    L, U = network.spec.L, network.spec.U
    labeled = forward(network, batch.labeledFeatures(), hyper)
    unlabeled = forward(network, batch.unlabeledFeatures(), hyper)

    terms = {}
    if CE in config.losses:
        terms[CE] = Losses.ce_loss(labeled.y_hat, torch.as_tensor(batch.labeled_targets), L)

    if CL in config.losses:
        augmented = forward(network, batch.unlabeled_augmented, hyper)
        pool = torch.cat([labeled.z, unlabeled.z], dim=0)
        if batch.contrast_category:
            queries = [query for query, _, _ in batch.contrast_category]
            positives = [positive for _, positive, _ in batch.contrast_category]
            negatives = [negative for _, _, negative in batch.contrast_category]
            terms[CL_CATEGORY] = Losses.category_contrastive(_gather(labeled.z, queries), _gather(labeled.z, positives),
                                                             _gather(pool, negatives), hyper.tau)
        queries = [query for query, _ in batch.contrast_instance]
        negatives = [negative for _, negative in batch.contrast_instance]
        terms[CL_INSTANCE] = Losses.instance_contrastive(_gather(unlabeled.z, queries), _gather(augmented.z, queries),
                                                         _gather(labeled.z, negatives), hyper.tau,
                                                         negative_statuses=[LABELED] * sum(map(len, negatives)))
        terms[MSE] = Losses.consistency_mse(unlabeled.z, augmented.z)

    if NL in config.losses:
        terms[NL] = Losses.nl_loss(unlabeled.y_hat, L)
    if ENTROPY in config.losses:
        terms[ENTROPY] = Losses.entropy_loss(unlabeled.y_hat)
    if VAR in config.losses:
        terms[VAR] = Losses.variance_loss(unlabeled.y_tilde, U, config.variance_mode, config.variance_unbiased)
        terms[BALANCE] = Losses.balance_loss(unlabeled.logits[:, L:], U)

    return terms, torch.cat([labeled.z, unlabeled.z], dim=0)


def _checkTerms(terms, epoch, step):
    for name, value in terms.items():
        if not bool(torch.isfinite(value).all()):
            raise NumericError('Non-finite loss', term=name, epoch=epoch, step=step)


def _applyGradients(network: NcdNetwork, optimizer, bundle, partition: str):
    parameters = dict(network.named_parameters())
    for name in network.partitionNames(partition):
        parameters[name].grad = bundle[name].clone()
    optimizer.step()


def _backward(network, loss, partition, term, epoch, step):
    try:
        return backward(network, loss, partition=partition, term=term)
    except NumericError as e:
        raise NumericError(e.detail, term=e.term, epoch=epoch, step=step)


def train_step(network: NcdNetwork, batch: JointBatch, config: TrainConfig, hyper: Hyperparams,
               weights: LossWeights, optimizers, epoch: int = 0, step: int = 0) -> LossBreakdown:
    """
    One optimizer step on a joint batch
    Without the adversary: one encoder update from the joint gradient.
    With it: disc_steps_per_enc_step discriminator updates on the detached embeddings, then one encoder
    update from joint + lambda_adv * adversarial through the frozen discriminator.
    :param optimizers: dict with ENCODER and, when adversarial, DISCRIMINATOR optimizers
    :return: LossBreakdown of the step
    """
    try:
        terms, pooled = step_terms(network, batch, config, hyper)
    except NumericError as e:
        raise NumericError(e.detail, term=e.term or 'forward', epoch=epoch, step=step)
    _checkTerms(terms, epoch, step)
    breakdown, joint = Losses.joint_loss(terms, weights)
    if not math.isfinite(breakdown.joint):
        raise NumericError('Non-finite loss', term=JOINT, epoch=epoch, step=step)

    if config.adversarial == ADV_OFF:
        bundle = _backward(network, joint, ENCODER, JOINT, epoch, step)
        _applyGradients(network, optimizers[ENCODER], bundle, ENCODER)
        return breakdown

    views = torch.as_tensor(batch.views())
    detached = pooled.detach()
    for _ in range(config.disc_steps_per_enc_step):
        discLoss = Losses.discriminator_loss(forward_discriminator(network, detached), views)
        _checkTerms({DISC: discLoss}, epoch, step)
        bundle = _backward(network, discLoss, DISCRIMINATOR, DISC, epoch, step)
        _applyGradients(network, optimizers[DISCRIMINATOR], bundle, DISCRIMINATOR)
    breakdown.disc = discLoss.item()

    advLoss = Losses.adversarial_loss(forward_discriminator(network, pooled), config.adversarial)
    _checkTerms({ADV: advLoss}, epoch, step)
    breakdown.adv = advLoss.item()
    bundle = _backward(network, joint + weights.lambda_adv * advLoss, ENCODER, JOINT, epoch, step)
    _applyGradients(network, optimizers[ENCODER], bundle, ENCODER)
    return breakdown


# TRAINING LOOP ------------------------------------------------------------------------------------

def make_optimizers(network: NcdNetwork, config: TrainConfig) -> dict:
    def build(parameters, lr):
        if config.optimizer == SGD:
            return torch.optim.SGD(parameters, lr=lr, momentum=config.momentum)
        return torch.optim.Adam(parameters, lr=lr, betas=tuple(config.betas))

    optimizers = {ENCODER: build(network.partitionParameters(ENCODER), config.lr)}
    if config.adversarial != ADV_OFF:
        discLr = config.disc_lr if config.disc_lr is not None else config.lr
        optimizers[DISCRIMINATOR] = build(network.partitionParameters(DISCRIMINATOR), discLr)
    return optimizers


def steps_per_epoch(sampler: JointSampler, config: TrainConfig, hyper: Hyperparams) -> int:
    if config.steps_per_epoch is not None:
        return int(config.steps_per_epoch)
    return max(1, math.ceil(len(sampler.unlabeled) / hyper.unlabeledBatchSize(sampler.spec)))


def _meanBreakdown(breakdowns: List[LossBreakdown]) -> dict:
    names = [item.name for item in fields(LossBreakdown)]
    return {name: float(np.mean([getattr(breakdown, name) for breakdown in breakdowns])) for name in names}


def _summary(report: Evaluation.EvalReport) -> dict:
    return {'acr': report.acr, 'acc': report.acc, 'silhouette': report.silhouette,
            'acc_by_view': {int(view): value for view, value in report.acc_by_view.items()}}


def _run(dataset, network: NcdNetwork, config: TrainConfig, hyper: Hyperparams, optimizers, log: TrainLog,
         startEpoch: int, configHash: str, outputDir=None):
    sampler = JointSampler(dataset.train, dataset.spec, hyper)
    steps = steps_per_epoch(sampler, config, hyper)
    torch.set_num_threads(config.threads)
    outputDir = pathlib.Path(outputDir) if outputDir is not None else None

    for epoch in range(startEpoch, config.epochs):
        n_ep = epoch
        started = time.perf_counter()
        weights = epoch_weights(config, hyper, n_ep)
        rng = np.random.default_rng([int(config.seed), epoch])

        network.train()
        breakdowns = []
        with BatchSequence(sampler, rng, steps, prefetch=config.prefetch) as batches:
            for step, batch in enumerate(batches):
                breakdowns.append(train_step(network, batch, config, hyper, weights, optimizers, epoch, step))

        snapshot = None
        if config.eval_every and dataset.test and ((epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs):
            network.eval()
            snapshot = _summary(Evaluation.evaluate(network, dataset.test, hyper))

        record = EpochRecord(epoch=epoch, n_ep=n_ep, weights=weights.toDict(), losses=_meanBreakdown(breakdowns),
                             eval=snapshot, seconds=time.perf_counter() - started)
        log.append(record)
        logger.info('epoch %d/%d joint %.4f ce %.4f nl %.4f H %.4f var %.4f bal %.4f%s', epoch + 1, config.epochs,
                    record.losses[JOINT], record.losses[CE], record.losses[NL], record.losses[ENTROPY],
                    record.losses[VAR], record.losses[BALANCE],
                    '' if snapshot is None else ' acr {} acc {}'.format(snapshot['acr'], snapshot['acc']))

        if outputDir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            _saveCheckpoint(outputDir / 'checkpoint-epoch{:04d}.yaml'.format(epoch + 1), network, configHash,
                            epoch + 1, optimizers, log)

    if outputDir is not None:
        _saveCheckpoint(outputDir / CHECKPOINT_FILE, network, configHash, config.epochs, optimizers, log)
    return network, log


def _saveCheckpoint(path, network, configHash, epochsDone, optimizers, log):
    Checkpoint.save(path, network, configHash, epoch=epochsDone, n_ep=epochsDone,
                    optimizers={name: optimizer.state_dict() for name, optimizer in optimizers.items()},
                    records=log.toDicts())


def _checkDimensions(dataset, network: NcdNetwork):
    if network.spec != dataset.spec:
        raise ShapeError('network built for {} cannot train on dataset {}'.format(network.spec, dataset.spec))


def train(dataset, params: NcdNetwork, config: TrainConfig, hyper: Hyperparams, outputDir=None,
          configHash: Optional[str] = None):
    """
    Trains params in place on dataset.train, evaluating snapshots on dataset.test
    :param dataset: SynthData.Dataset (or any object with spec, train, test)
    :param params: NcdNetwork from Model.init_params
    :param config: TrainConfig
    :param hyper: Hyperparams
    :param outputDir: directory for checkpoints and the streamed TrainLog, None keeps everything in memory
    :param configHash: hash recorded in checkpoints, defaults to training_hash
    :return: (params, TrainLog)
    """
    config.validate()
    hyper.validate(dataset.spec)
    _checkDimensions(dataset, params)
    if configHash is None:
        configHash = training_hash(dataset, params, config, hyper)

    log = TrainLog(path=pathlib.Path(outputDir) / LOG_FILE if outputDir is not None else None)
    optimizers = make_optimizers(params, config)
    logger.info('Training %d epochs, losses %s, schedule %s, adversarial %s', config.epochs,
                ','.join(config.losses), config.schedule, config.adversarial)
    return _run(dataset, params, config, hyper, optimizers, log, 0, configHash, outputDir)


def resume(checkpointPath, dataset, config: TrainConfig, hyper: Hyperparams, outputDir=None,
           configHash: Optional[str] = None):
    """
    Continues a run from a checkpoint up to config.epochs
    :param checkpointPath: checkpoint file written by train
    :param configHash: expected hash, defaults to training_hash of the rebuilt network
    :return: (params, TrainLog) including the records of the epochs before the checkpoint
    """
    config.validate()
    hyper.validate(dataset.spec)
    checkpoint = Checkpoint.load(checkpointPath)
    network = Checkpoint.restore_network(checkpoint)
    _checkDimensions(dataset, network)
    if configHash is None:
        configHash = training_hash(dataset, network, config, hyper)
    if checkpoint.config_hash != configHash:
        raise ConfigError('checkpoint {} was written by a different configuration (hash {} != {})'.format(
            checkpointPath, checkpoint.config_hash[:12], configHash[:12]), key='config_hash')
    if checkpoint.epoch > config.epochs:
        raise ConfigError('checkpoint is at epoch {}, past the configured {} epochs'.format(
            checkpoint.epoch, config.epochs), key='epochs')

    optimizers = make_optimizers(network, config)
    for name, optimizer in optimizers.items():
        if name in checkpoint.optimizers:
            optimizer.load_state_dict(checkpoint.optimizers[name])

    records = [EpochRecord.fromDict(record) for record in checkpoint.records]
    log = TrainLog(records, path=pathlib.Path(outputDir) / LOG_FILE if outputDir is not None else None)
    logger.info('Resuming at epoch %d (n_ep %d) of %d', checkpoint.epoch, checkpoint.n_ep, config.epochs)
    return _run(dataset, network, config, hyper, optimizers, log, checkpoint.n_ep, configHash, outputDir)
