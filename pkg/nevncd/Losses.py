"""
Loss terms of the joint objective, the adaptive weight schedule and the weighted combination
All losses are batch means over float64 tensors and are differentiable through torch autograd
"""

from dataclasses import dataclass, asdict, fields
from typing import Dict, Optional, Sequence

import torch

from nevncd.Core import (EPS, UNLABELED, ConfigError, LabelError, NumericError, SamplingError, ShapeError,
                         as_tensor, normalize)
from nevncd.Utilities.Tools import (ADAPTIVE, ADV_LITERAL, ADV_UNIFORM, BALANCE, BATCHWISE, CE, CL_CATEGORY,
                                    CL_INSTANCE, COMPONENTWISE, ENTROPY, FIXED, LOSS_NAMES, MSE, NL, SCHEDULE_MODES,
                                    VAR)


@dataclass
class LossWeights:
    lambda_ce: float = 1.0
    lambda_cl: float = 1.0
    lambda_nl: float = 1.0
    lambda_H: float = 1.0
    lambda_var: float = 1.0
    lambda_adv: float = 0.0
    n_ep: int = 0
    schedule_mode: str = ADAPTIVE
    # sub-weights of the three terms sharing lambda_cl
    mu_category: float = 1.0
    mu_instance: float = 1.0
    mu_mse: float = 1.0
    # head-balance term, shares lambda_var with the variance term
    mu_balance: float = 2.0

    def __post_init__(self):
        for item in fields(self):
            if item.name.startswith(('lambda_', 'mu_')) and getattr(self, item.name) < 0:
                raise ConfigError('{} must be >= 0, got {}'.format(item.name, getattr(self, item.name)),
                                  key=item.name)
        if self.schedule_mode not in SCHEDULE_MODES:
            raise ConfigError('schedule_mode must be one of {}'.format(SCHEDULE_MODES), key='schedule_mode')

    def termWeight(self, term: str) -> float:
        """
        Effective weight of one LossBreakdown term in the joint loss
        """
        return {CE: self.lambda_ce,
                CL_CATEGORY: self.lambda_cl * self.mu_category,
                CL_INSTANCE: self.lambda_cl * self.mu_instance,
                MSE: self.lambda_cl * self.mu_mse,
                NL: self.lambda_nl,
                ENTROPY: self.lambda_H,
                VAR: self.lambda_var,
                BALANCE: self.lambda_var * self.mu_balance}.get(term, 0.0)

    def toDict(self):
        return asdict(self)


@dataclass
class LossBreakdown:
    ce: float = 0.0
    nl: float = 0.0
    H: float = 0.0
    cl_category: float = 0.0
    cl_instance: float = 0.0
    mse: float = 0.0
    var: float = 0.0
    bal: float = 0.0
    disc: float = 0.0
    adv: float = 0.0
    joint: float = 0.0

    def toDict(self):
        return asdict(self)


# CLASSIFICATION LOSSES ----------------------------------------------------------------------------

def one_hot(ids, L: int) -> torch.Tensor:
    """
    One-hot targets over the labeled classes, rejects ids outside [0, L)
    """
    ids = torch.as_tensor(ids, dtype=torch.long).reshape(-1)
    if bool(((ids < 0) | (ids >= L)).any()):
        raise LabelError('Labeled targets must be in [0, {}), got {}'.format(L, ids[(ids < 0) | (ids >= L)].tolist()))
    return torch.nn.functional.one_hot(ids, L).to(torch.float64)


def _batch(y_hat) -> torch.Tensor:
    y_hat = as_tensor(y_hat)
    return y_hat.unsqueeze(0) if y_hat.dim() == 1 else y_hat


def ce_loss(y_hat, targets, L: int) -> torch.Tensor:
    """
    Cross-entropy of labeled examples against their labeled-class targets
    :param y_hat: (N, L + U) probabilities
    :param targets: (N,) class ids in [0, L) or (N, L) one-hot rows
    :param L: number of labeled classes
    """
    y_hat = _batch(y_hat)
    targets = torch.as_tensor(targets)
    if targets.dim() <= 1 and not torch.is_floating_point(targets):
        targets = one_hot(targets, L)
    targets = as_tensor(targets)
    if targets.dim() == 1:
        targets = targets.unsqueeze(0)
    if targets.shape[-1] != L or targets.shape[0] != y_hat.shape[0]:
        raise ShapeError('ce_loss: targets must be one-hot over the labeled classes',
                         expected=(y_hat.shape[0], L), actual=tuple(targets.shape))
    logProbs = torch.log(torch.clamp(y_hat[:, :L], min=EPS))
    return -(targets * logProbs).sum(dim=1).mean()


def nl_loss(y_hat, L: int) -> torch.Tensor:
    """
    Negative learning on unlabeled examples: every labeled class is a complementary label
    """
    y_hat = _batch(y_hat)
    return -torch.log(torch.clamp(1.0 - y_hat[:, :L], min=EPS)).sum(dim=1).mean()


def entropy_loss(y_hat) -> torch.Tensor:
    """
    Mean prediction entropy over all L + U heads
    """
    y_hat = _batch(y_hat)
    return -(y_hat * torch.log(torch.clamp(y_hat, min=EPS))).sum(dim=1).mean()


# CONTRASTIVE LOSSES -------------------------------------------------------------------------------

def _info_nce(query, positive, negatives, tau: float) -> torch.Tensor:
    query = as_tensor(query)
    positive = as_tensor(positive)
    negatives = as_tensor(negatives)
    if query.dim() == 1:
        query, positive, negatives = query.unsqueeze(0), positive.unsqueeze(0), negatives.unsqueeze(0)
    if negatives.dim() != 3 or negatives.shape[1] == 0:
        raise SamplingError('Contrastive loss needs at least one negative per query')
    if positive.shape != query.shape or negatives.shape[0] != query.shape[0]:
        raise ShapeError('Contrastive loss: query/positive/negatives disagree', expected=tuple(query.shape),
                         actual=tuple(positive.shape))
    if not tau > 0:
        raise NumericError('Contrastive temperature must be > 0, got {}'.format(tau))

    query = normalize(query)
    positive = normalize(positive)
    negatives = normalize(negatives)

    positiveLogits = (query * positive).sum(dim=1, keepdim=True) / tau
    negativeLogits = torch.bmm(negatives, query.unsqueeze(2)).squeeze(2) / tau
    logits = torch.cat([positiveLogits, negativeLogits], dim=1)
    return (torch.logsumexp(logits, dim=1) - logits[:, 0]).mean()


def category_contrastive(query, positive, negatives, tau: float) -> torch.Tensor:
    """
    InfoNCE over labeled queries, same-class positives, and negatives from other labeled
    classes or from unlabeled data
    :param query: (Q, D) or (D,)
    :param positive: same shape as query
    :param negatives: (Q, N, D) or (N, D)
    :param tau: temperature
    """
    return _info_nce(query, positive, negatives, tau)


def instance_contrastive(query, augmented, negatives, tau: float,
                         negative_statuses: Optional[Sequence[str]] = None) -> torch.Tensor:
    """
    InfoNCE over unlabeled queries with their augmented view as positive
    Negatives must all be labeled, an unlabeled negative may share the query's latent class
    :param negative_statuses: status of every negative, checked when given
    """
    if negative_statuses is not None and any(status == UNLABELED for status in negative_statuses):
        raise SamplingError('instance_contrastive: negatives must come from labeled data only')
    return _info_nce(query, augmented, negatives, tau)


def consistency_mse(z, z_prime) -> torch.Tensor:
    """
    Mean squared distance between L2-normalized embeddings and their augmented counterparts
    """
    z = normalize(_batch(z))
    z_prime = normalize(_batch(z_prime))
    return ((z - z_prime) ** 2).sum(dim=1).mean()


# VARIANCE REGULARIZATION --------------------------------------------------------------------------

def fair_die_variance(U: int) -> float:
    """
    Variance of one face indicator of a fair U-face die
    """
    return (U - 1) / U ** 2


def variance_loss(y_tilde, U: int, mode: str = BATCHWISE, unbiased: bool = True) -> torch.Tensor:
    """
    Squared deviation of prediction variance from the fair-die variance (U - 1) / U^2
    batchwise:     per unlabeled head, variance across the batch, then mean over heads
    componentwise: per instance, population variance across its U components, then mean over batch
    :param y_tilde: (N, U) sharpened unlabeled predictions
    :param unbiased: n - 1 denominator for the batchwise variance
    """
    y_tilde = _batch(y_tilde)
    if y_tilde.shape[1] != U:
        raise ShapeError('variance_loss: y_tilde width', expected=(y_tilde.shape[0], U), actual=tuple(y_tilde.shape))
    target = fair_die_variance(U)
    if mode == BATCHWISE:
        if y_tilde.shape[0] < U or y_tilde.shape[0] < 2:
            raise SamplingError('variance_loss: batch of {} is smaller than U = {}'.format(y_tilde.shape[0], U))
        variances = y_tilde.var(dim=0, unbiased=unbiased)
        return ((variances - target) ** 2).mean()
    elif mode == COMPONENTWISE:
        variances = y_tilde.var(dim=1, unbiased=False)
        return ((variances - target) ** 2).mean()
    raise ConfigError('Unknown variance mode {!r}'.format(mode), key='variance_mode')


def balance_loss(logits_u, U: int) -> torch.Tensor:
    """
    KL divergence of the batch-mean unlabeled-slice prediction from the fair-die mean 1/U per head
    Zero iff every unlabeled head holds 1/U of the batch. Unlike the variance term its gradient
    reaches heads that hold no instance, so a batch routed onto one head is not a stationary point.
    :param logits_u: (N, U) unlabeled-head logits, softmax over the slice at temperature 1
    """
    logits_u = _batch(logits_u)
    if logits_u.shape[1] != U:
        raise ShapeError('balance_loss: logits width', expected=(logits_u.shape[0], U), actual=tuple(logits_u.shape))
    mean = torch.softmax(logits_u, dim=1).mean(dim=0)
    return (mean * torch.log(torch.clamp(mean * U, min=EPS))).sum()


# VIEW ADVERSARIAL LOSSES --------------------------------------------------------------------------

def discriminator_loss(disc_probs, views) -> torch.Tensor:
    """
    Cross-entropy of the discriminator against the true view
    :param disc_probs: (N, K) view probabilities
    :param views: (N,) view ids in [0, K)
    """
    disc_probs = _batch(disc_probs)
    views = torch.as_tensor(views, dtype=torch.long).reshape(-1)
    K = disc_probs.shape[1]
    if bool(((views < 0) | (views >= K)).any()):
        raise LabelError('View ids must be in [0, {}), got {}'.format(K, sorted(set(views.tolist()))))
    picked = disc_probs.gather(1, views.unsqueeze(1)).squeeze(1)
    return -torch.log(torch.clamp(picked, min=EPS)).mean()


def adversarial_loss(disc_probs, mode: str = ADV_UNIFORM) -> torch.Tensor:
    """
    Encoder-side adversarial loss, the discriminator is treated as frozen
    uniform: cross-entropy to the uniform view distribution
    literal: cross-entropy to view 0 for every instance
    """
    disc_probs = _batch(disc_probs)
    logProbs = torch.log(torch.clamp(disc_probs, min=EPS))
    if mode == ADV_UNIFORM:
        return -logProbs.mean(dim=1).mean()
    elif mode == ADV_LITERAL:
        return -logProbs[:, 0].mean()
    raise ConfigError('Unknown adversarial mode {!r}'.format(mode), key='adversarial')


# WEIGHTS AND JOINT LOSS ---------------------------------------------------------------------------

def schedule_weights(n_ep: int, lambda_H: float = 1.0, lambda_adv: float = 0.0,
                     lambda_max: Optional[float] = None) -> LossWeights:
    """
    Adaptive weights for epoch counter n_ep
        lambda_cl = lambda_nl = lambda_var = 0.2 + 0.5 * n_ep
        lambda_ce = max(0, 1 - 0.01 * n_ep) + 0.5
    :param lambda_max: optional cap on the growing weights, None leaves them unbounded
    """
    if n_ep < 0:
        raise ConfigError('n_ep must be >= 0, got {}'.format(n_ep), key='n_ep')
    growing = 0.2 + 0.5 * n_ep
    if lambda_max is not None:
        growing = min(growing, lambda_max)
    return LossWeights(lambda_ce=max(0.0, 1.0 - 0.01 * n_ep) + 0.5,
                       lambda_cl=growing,
                       lambda_nl=growing,
                       lambda_H=lambda_H,
                       lambda_var=growing,
                       lambda_adv=lambda_adv,
                       n_ep=n_ep,
                       schedule_mode=ADAPTIVE)


def fixed_weights(n_ep: int, weights: Dict[str, float]) -> LossWeights:
    """
    Constant weights, used for the constant-lambda ablations
    """
    return LossWeights(n_ep=n_ep, schedule_mode=FIXED, **weights)


def _scalar(value) -> float:
    if isinstance(value, torch.Tensor):
        return value.detach().item()
    return float(value)


def joint_loss(terms: Dict[str, torch.Tensor], weights: LossWeights):
    """
    Weighted sum of the loss terms
        joint = l_ce ce + l_cl (mu_c cl_category + mu_i cl_instance + mu_m mse) + l_nl nl + l_H H
                + l_var (var + mu_b bal)
    Terms with zero weight, or that were not computed, are skipped. disc and adv are only recorded,
    the trainer applies them in its adversarial alternation.
    :param terms: loss name -> scalar tensor (or float)
    :param weights: LossWeights
    :return: (LossBreakdown of floats, joint scalar tensor)
    """
    for item in fields(weights):
        if item.name.startswith(('lambda_', 'mu_')) and getattr(weights, item.name) < 0:
            raise ConfigError('Negative loss weight {} = {}'.format(item.name, getattr(weights, item.name)),
                              key=item.name)

    joint = torch.zeros((), dtype=torch.float64)
    breakdown = LossBreakdown()
    for name in LOSS_NAMES:
        value = terms.get(name)
        if value is None:
            continue
        setattr(breakdown, name, _scalar(value))
        weight = weights.termWeight(name)
        if weight != 0:
            joint = joint + weight * value
    breakdown.joint = _scalar(joint)
    return breakdown, joint
