import functools
import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from nevncd import Losses, RunConfig
from nevncd.Core import ConfigError, Hyperparams, NumericError, ParseError, SamplingError, ShapeError
from nevncd.Evaluation import evaluate, predict
from nevncd.Losses import LossWeights
from nevncd.Model import init_params
from nevncd.Sampler import JointSampler
from nevncd.SynthData import generate
from nevncd.Trainer import (CHECKPOINT_FILE, LOG_FILE, EpochRecord, TrainConfig, TrainLog, epoch_weights,
                            make_optimizers, resume, step_terms, steps_per_epoch, train, train_step, training_hash)
from nevncd.Utilities import Checkpoint
from nevncd.Utilities.BatchThread import BatchSequence
from nevncd.Utilities.Tools import DISCRIMINATOR, ENCODER, TOGGLE_TERMS


def _network(spec, seed=0):
    return init_params(spec, [6], seed=seed, embed_dim=4, disc_widths=[3])


def _config(**overrides):
    return TrainConfig(**dict(dict(epochs=2, steps_per_epoch=2, prefetch=False), **overrides))


def _params(network):
    return {name: value.detach().clone() for name, value in network.named_parameters()}


# CONFIGURATION ------------------------------------------------------------------------------------

@pytest.mark.parametrize('field, value', [('epochs', 0), ('optimizer', 'rmsprop'), ('losses', ['ce', 'sk']),
                                          ('adversarial', 'maybe'), ('schedule', 'cosine'),
                                          ('fixed_weights', {'lambda_zz': 1.0}), ('betas', [0.9]),
                                          ('variance_mode', 'rowwise'), ('disc_steps_per_enc_step', 0),
                                          ('mu_balance', -1.0)])
def test_train_config_validation(field, value):
    with pytest.raises(ConfigError) as error:
        TrainConfig(**{field: value}).validate()
    assert error.value.key == field


def test_epoch_weights_adaptive_with_toggles():
    weights = epoch_weights(TrainConfig(losses=['ce', 'nl']), Hyperparams(), 1)
    assert weights.lambda_ce == pytest.approx(1.49)
    assert weights.lambda_nl == pytest.approx(0.7)
    assert weights.lambda_cl == weights.lambda_H == weights.lambda_var == 0.0
    assert weights.lambda_adv == 0.0


def test_epoch_weights_adversarial_and_fixed():
    assert epoch_weights(TrainConfig(adversarial='uniform'), Hyperparams(), 0).lambda_adv == 0.1
    fixed = epoch_weights(TrainConfig(schedule='fixed', fixed_weights={'lambda_nl': 0.5}), Hyperparams(lambda_H=0.3),
                          20)
    assert (fixed.lambda_ce, fixed.lambda_nl, fixed.lambda_H, fixed.lambda_var) == (1.0, 0.5, 0.3, 1.0)
    assert fixed.n_ep == 20


def test_default_steps_per_epoch(small_dataset, hyper):
    sampler = JointSampler(small_dataset.train, small_dataset.spec, hyper)
    # 48 unlabeled training examples in batches of 10 * U = 20
    assert steps_per_epoch(sampler, TrainConfig(), hyper) == 3
    assert steps_per_epoch(sampler, TrainConfig(steps_per_epoch=7), hyper) == 7


def test_training_hash_ignores_cadence(small_dataset, tiny_network, hyper):
    base = training_hash(small_dataset, tiny_network, _config(), hyper)
    assert training_hash(small_dataset, tiny_network, _config(epochs=9, checkpoint_every=2), hyper) == base
    assert training_hash(small_dataset, tiny_network, _config(lr=0.01), hyper) != base
    assert training_hash(small_dataset, tiny_network, _config(), replace(hyper, tau=0.1)) != base


# TRAINING -----------------------------------------------------------------------------------------

def test_short_run(small_dataset, hyper):
    network, log = train(small_dataset, _network(small_dataset.spec), _config(), hyper)
    assert [record.epoch for record in log.records] == [0, 1]
    assert [record.weights['lambda_ce'] for record in log.records] == pytest.approx([1.5, 1.49])
    for record in log.records:
        assert all(np.isfinite(value) for value in record.losses.values())
        assert record.eval is not None and 0.0 <= record.eval['acc'] <= 1.0
        weights = LossWeights(**record.weights)
        weighted = sum(weights.termWeight(name) * value for name, value in record.losses.items())
        assert weighted == pytest.approx(record.losses['joint'], abs=1e-9)


def test_training_changes_parameters(small_dataset, hyper):
    network = _network(small_dataset.spec)
    before = _params(network)
    train(small_dataset, network, _config(epochs=1), hyper)
    after = _params(network)
    assert any(not torch.equal(before[name], after[name]) for name in network.partitionNames(ENCODER))
    # without the adversary the discriminator is never updated
    assert all(torch.equal(before[name], after[name]) for name in network.partitionNames(DISCRIMINATOR))


def test_runs_are_deterministic(small_dataset, hyper):
    first, firstLog = train(small_dataset, _network(small_dataset.spec), _config(), hyper)
    second, secondLog = train(small_dataset, _network(small_dataset.spec), _config(), hyper)
    assert firstLog.lossSequence() == secondLog.lossSequence()
    for name, value in first.state_dict().items():
        assert torch.equal(value, second.state_dict()[name])


def test_prefetch_does_not_change_the_run(small_dataset, hyper):
    _, inline = train(small_dataset, _network(small_dataset.spec), _config(prefetch=False), hyper)
    _, threaded = train(small_dataset, _network(small_dataset.spec), _config(prefetch=True), hyper)
    assert inline.lossSequence() == threaded.lossSequence()


def test_train_rejects_mismatched_network(small_dataset, multiview_dataset, hyper):
    with pytest.raises(ShapeError):
        train(small_dataset, _network(multiview_dataset.spec), _config(), hyper)


def test_adversarial_step_respects_partitions(multiview_dataset, hyper):
    spec = multiview_dataset.spec
    config = _config(adversarial='uniform', optimizer='sgd', lr=0.1)
    batch = JointSampler(multiview_dataset.train, spec, hyper).makeBatch(0)
    weights = epoch_weights(config, hyper, 0)

    network = _network(spec)
    optimizers = make_optimizers(network, config)
    optimizers[ENCODER].param_groups[0]['lr'] = 0.0
    before = _params(network)
    breakdown = train_step(network, batch, config, hyper, weights, optimizers)
    after = _params(network)
    assert all(torch.equal(before[name], after[name]) for name in network.partitionNames(ENCODER))
    assert any(not torch.equal(before[name], after[name]) for name in network.partitionNames(DISCRIMINATOR))
    assert breakdown.disc > 0 and breakdown.adv > 0

    network = _network(spec)
    optimizers = make_optimizers(network, config)
    optimizers[DISCRIMINATOR].param_groups[0]['lr'] = 0.0
    before = _params(network)
    train_step(network, batch, config, hyper, weights, optimizers)
    after = _params(network)
    assert all(torch.equal(before[name], after[name]) for name in network.partitionNames(DISCRIMINATOR))
    assert any(not torch.equal(before[name], after[name]) for name in network.partitionNames(ENCODER))


@pytest.mark.parametrize('losses', [['ce', 'cl', 'nl', 'H', 'var'], ['ce', 'cl', 'nl', 'H'], ['ce', 'var']])
def test_step_terms_follow_toggles(small_dataset, hyper, losses):
    batch = JointSampler(small_dataset.train, small_dataset.spec, hyper).makeBatch(0)
    terms, _ = step_terms(_network(small_dataset.spec), batch, _config(losses=losses), hyper)
    assert sorted(terms) == sorted(term for toggle in losses for term in TOGGLE_TERMS[toggle])
    assert all(term.requires_grad for term in terms.values())


def test_epoch_weights_carry_balance_weight():
    assert epoch_weights(TrainConfig(mu_balance=3.0), Hyperparams(), 4).termWeight('bal') == pytest.approx(6.6)
    fixed = epoch_weights(TrainConfig(schedule='fixed', mu_balance=0.5), Hyperparams(), 0)
    assert fixed.mu_balance == 0.5
    # the balance term goes with the variance toggle
    assert epoch_weights(TrainConfig(losses=['ce', 'nl']), Hyperparams(), 4).termWeight('bal') == 0.0


def test_non_finite_loss_names_term(monkeypatch, small_dataset, hyper):
    monkeypatch.setattr(Losses, 'nl_loss', lambda y_hat, L: torch.tensor(float('nan'), dtype=torch.float64))
    with pytest.raises(NumericError) as error:
        train(small_dataset, _network(small_dataset.spec), _config(), hyper)
    assert (error.value.term, error.value.epoch, error.value.step) == ('nl', 0, 0)


# CHECKPOINTS AND RESUME ---------------------------------------------------------------------------

def test_resume_reproduces_uninterrupted_run(tmp_path, small_dataset, hyper):
    config = _config(epochs=6, checkpoint_every=3)
    full, fullLog = train(small_dataset, _network(small_dataset.spec), config, hyper, outputDir=tmp_path / 'full')
    assert (tmp_path / 'full' / 'checkpoint-epoch0003.yaml').exists()
    assert (tmp_path / 'full' / 'checkpoint-epoch0006.yaml').exists()
    assert (tmp_path / 'full' / CHECKPOINT_FILE).exists()

    resumed, resumedLog = resume(tmp_path / 'full' / 'checkpoint-epoch0003.yaml', small_dataset, config, hyper,
                                 outputDir=tmp_path / 'resumed')
    assert resumedLog.lossSequence() == fullLog.lossSequence()
    assert resumedLog.records[5].weights['lambda_ce'] == pytest.approx(1.45)
    for name, value in full.state_dict().items():
        assert torch.equal(value, resumed.state_dict()[name])
    lines = (tmp_path / 'resumed' / LOG_FILE).read_text().splitlines()
    assert [json.loads(line)['epoch'] for line in lines] == list(range(6))


def test_resume_rejects_other_configuration(tmp_path, small_dataset, hyper):
    config = _config(epochs=2)
    train(small_dataset, _network(small_dataset.spec), config, hyper, outputDir=tmp_path)
    with pytest.raises(ConfigError) as error:
        resume(tmp_path / CHECKPOINT_FILE, small_dataset, replace(config, lr=0.01), hyper)
    assert error.value.key == 'config_hash'
    with pytest.raises(ConfigError) as error:
        resume(tmp_path / CHECKPOINT_FILE, small_dataset, replace(config, epochs=1), hyper)
    assert error.value.key == 'epochs'


def test_checkpoint_restores_parameters(tmp_path, tiny_network):
    path = tmp_path / 'checkpoint.yaml'
    Checkpoint.save(path, tiny_network, 'abc', epoch=4, n_ep=4)
    checkpoint = Checkpoint.load(path)
    assert (checkpoint.config_hash, checkpoint.epoch, checkpoint.n_ep) == ('abc', 4, 4)
    restored = Checkpoint.restore_network(checkpoint)
    for name, value in tiny_network.state_dict().items():
        assert torch.equal(value, restored.state_dict()[name])

    checkpoint.params['head.weight'] = torch.zeros(1, 1, dtype=torch.float64)
    with pytest.raises(ShapeError):
        Checkpoint.restore_network(checkpoint)


@pytest.mark.parametrize('text', ['format: 1\nparams: 3\n', 'params: [1, 2\n'])
def test_malformed_checkpoint(tmp_path, text):
    path = tmp_path / 'checkpoint.yaml'
    path.write_text(text, encoding='utf-8')
    with pytest.raises(ParseError):
        Checkpoint.load(path)


# LOG AND BATCH PREPARATION ------------------------------------------------------------------------

def _record(epoch):
    return EpochRecord(epoch=epoch, n_ep=epoch, weights={'lambda_ce': 1.5}, losses={'joint': 0.25 * epoch})


def test_train_log_streams_records(tmp_path):
    log = TrainLog(path=tmp_path / LOG_FILE)
    log.append(_record(0))
    log.append(_record(1))
    assert len(log) == 2
    assert TrainLog.load(tmp_path / LOG_FILE).lossSequence() == log.lossSequence()
    with pytest.raises(ConfigError):
        log.append(_record(3))


class FailingSampler:

    def __init__(self, failAt):
        self.calls = 0
        self.failAt = failAt

    def makeBatch(self, rng):
        self.calls += 1
        if self.calls == self.failAt:
            raise SamplingError('no batch')
        return self.calls


def test_batch_thread_hands_over_exceptions():
    with BatchSequence(FailingSampler(failAt=2), None, 3, prefetch=True) as batches:
        iterator = iter(batches)
        assert next(iterator) == 1
        with pytest.raises(SamplingError):
            next(iterator)


def test_prefetched_batches_match_inline(small_dataset, hyper):
    sampler = JointSampler(small_dataset.train, small_dataset.spec, hyper)
    with BatchSequence(sampler, np.random.default_rng([0, 0]), 3, prefetch=True) as batches:
        threaded = list(batches)
    with BatchSequence(sampler, np.random.default_rng([0, 0]), 3, prefetch=False) as batches:
        inline = list(batches)
    for a, b in zip(threaded, inline):
        assert a.contrast_category == b.contrast_category
        assert np.array_equal(a.unlabeled_augmented, b.unlabeled_augmented)


# END TO END ---------------------------------------------------------------------------------------

SEEDS = range(5)


def _presetTrain(name, seed):
    config = RunConfig.preset(name).withSeed(seed)
    dataset = generate(config.data, config.data_seed)
    network, log = train(dataset, config.buildNetwork(), replace(config.train, eval_every=0), config.hyper)
    return network, log, dataset, config


def _presetRun(name, seed):
    network, log, dataset, config = _presetTrain(name, seed)
    return evaluate(network, dataset.test, config.hyper), log


@functools.lru_cache(maxsize=None)
def _novelOutcome(name, seed):
    """
    :return: (EvalReport, largest share of the unlabeled-slice mass held by one head on unlabeled test examples)
    """
    network, _, dataset, config = _presetTrain(name, seed)
    novel = [example for example in dataset.test if not example.isLabeled]
    _, y_hat = predict(network, novel, config.hyper)
    unlabeledSlice = y_hat[:, network.spec.L:]
    shares = (unlabeledSlice / unlabeledSlice.sum(axis=1, keepdims=True)).mean(axis=0)
    return evaluate(network, dataset.test, config.hyper), float(shares.max())


def _meanAcc(name):
    return float(np.mean([_novelOutcome(name, seed)[0].acc for seed in SEEDS]))


@pytest.mark.slow
def test_separable_full_discovers_novel_classes():
    reports = [_novelOutcome('full', seed)[0] for seed in SEEDS]
    assert sum(report.acr >= 0.95 and report.acc >= 0.90 for report in reports) >= 4


@pytest.mark.slow
@pytest.mark.parametrize('seed', SEEDS)
def test_supervised_only_stays_near_chance(seed):
    assert _novelOutcome('sup', seed)[0].acc <= 0.40


@pytest.mark.slow
def test_ablation_ordering():
    full, nlH, nl, var = (_meanAcc(row) for row in ('full', 'nl-H', 'nl', 'var'))
    assert full >= nlH >= nl >= var
    assert full - var >= 0.25


@pytest.mark.slow
def test_clustering_without_variance_collapses():
    nlHShares = [_novelOutcome('nl-H', seed)[1] for seed in SEEDS]
    assert max(nlHShares) >= 0.60 or _meanAcc('full') - _meanAcc('nl-H') >= 0.10
    # with the variance and balance terms on, no head takes most of the unlabeled mass
    fullShares = [_novelOutcome('full', seed)[1] for seed in SEEDS]
    assert sum(share < 0.60 for share in fullShares) >= 4


@pytest.mark.slow
def test_view_invariance_improves_novel_views():
    hidden = RunConfig.preset('views-unlabeled-v1').data.hidden_unlabeled_views
    deltas, silhouetteDeltas = [], []
    for seed in SEEDS:
        plain, _ = _presetRun('views-unlabeled-v1', seed)
        invariant, _ = _presetRun('views-unlabeled-v1-vi', seed)
        deltas.append(np.mean([invariant.acc_by_view[view] - plain.acc_by_view[view] for view in hidden]))
        silhouetteDeltas.append(invariant.silhouette - plain.silhouette)
    assert np.mean(deltas) >= 0.10
    assert np.mean(silhouetteDeltas) >= 0.05


@pytest.mark.slow
def test_preset_runs_are_deterministic():
    first, firstLog = _presetRun('separable-10', 3)
    second, secondLog = _presetRun('separable-10', 3)
    assert firstLog.lossSequence() == secondLog.lossSequence()
    assert first.toDict() == second.toDict()
