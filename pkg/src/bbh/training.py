"""ELBO optimisation for every posterior family.

The per-step objective is ``nll + anneal * kl_scale * kl`` where ``nll`` is
the minibatch-mean negative log-likelihood and ``kl_scale = 1/N`` spreads
the full-dataset KL term over the N training examples.
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from . import divergence as dv
from .data import batch_iter
from .errors import ContractError, TrainingError
from .nets import apply_network
from .optim import Adam, AdamState, adam_step  # noqa: F401  (re-exported)
from .posterior import (
    DropoutPosterior,
    EnsemblePosterior,
    FactorizedGaussianPosterior,
    HypernetConfig,
    HypernetPosterior,
    PointPosterior,
)

log = logging.getLogger(__name__)

METHODS = ("bbh", "bbb", "bbb_kernel", "bbb_avb", "dropout", "map", "ensemble")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "bbh"
    lr: float = None
    steps: int = 1000
    batch_size: int = 100
    kl_samples: int = 5
    prior_samples: int = 5
    anneal_fraction: float = None
    kl_scale: float = None
    seed: int = 0
    ensemble_size: int = 5
    dropout_rate: float = 0.5
    rho_init: float = -3.0
    disc_pretrain: int = 100
    disc_ratio: int = 5
    disc_subsample: int = 4096
    use_likelihood: bool = True
    log_every: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.lr is None:
            object.__setattr__(self, "lr", 1e-4 if self.method == "bbh" else 1e-3)
        if self.anneal_fraction is None:
            object.__setattr__(self, "anneal_fraction", 0.5 if self.method == "bbh" else 0.0)
        if not self.lr > 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ContractError("batch_size must be at least 1")
        if not 0.0 <= self.anneal_fraction <= 1.0:
            raise ContractError("anneal_fraction must lie in [0, 1]")
        if self.steps < 1:
            raise ContractError("steps must be at least 1")
        if self.kl_samples < 2:
            raise ContractError("kl_samples must be at least 2")
        if self.prior_samples < 1:
            raise ContractError("prior_samples must be at least 1")
        if self.ensemble_size < 1:
            raise ContractError("ensemble_size must be at least 1")


@dataclass
class TrainResult:
    posterior: object
    log: list = field(default_factory=list)
    runtime_s: float = 0.0


def anneal_factor(step, total_steps, fraction):
    """Linear KL warm-up: min(1, step / (fraction * total_steps))."""
    if total_steps <= 0:
        raise ContractError("total_steps must be positive")
    if fraction <= 0:
        return 1.0
    return float(min(1.0, step / (fraction * total_steps)))


def elbo_loss(nll, kl, anneal, kl_scale):
    if not 0.0 <= anneal <= 1.0:
        raise ContractError(f"anneal must lie in [0, 1], got {anneal}")
    if not kl_scale > 0:
        raise ContractError(f"kl_scale must be positive, got {kl_scale}")
    if anneal == 0.0:
        return ag.as_tensor(nll)
    return ag.as_tensor(nll) + kl * (anneal * kl_scale)


def negative_log_likelihood(spec, weights, x, y, classification):
    out = apply_network(spec, weights, x)
    if classification:
        return ag.softmax_cross_entropy(out, y)
    # unit-variance Gaussian likelihood, constant dropped
    return ag.tsum(ag.square(out - y)) * (0.5 / len(x))


def build_posterior(config, spec, rng, hypernet=None):
    m = config.method
    if m == "bbh":
        return HypernetPosterior(spec, hypernet or HypernetConfig(), rng)
    if m in ("bbb", "bbb_kernel", "bbb_avb"):
        return FactorizedGaussianPosterior(spec, rng, config.rho_init)
    if m == "dropout":
        return DropoutPosterior(spec, rng, config.dropout_rate)
    if m == "map":
        return PointPosterior(spec, rng)
    raise ContractError(f"method {m!r} has no single posterior; use train_ensemble")


def _first_sample(stacked):
    return {k: v[0] for k, v in stacked.items()}


def _kl_samples(stacked):
    return {k: v[1:] for k, v in stacked.items()}


class _AdversarialKL:
    """Discriminator-based KL for factorised posteriors, scalars treated independently."""

    def __init__(self, config, posterior, rng):
        self.config = config
        self.posterior = posterior
        sched = dv.DiscriminatorSchedule(config.disc_pretrain, config.disc_ratio)
        self.trainer = dv.DiscriminatorTrainer(sched, rng)
        self.n_weights = posterior.spec.num_params()

    def _q_draws(self, rng, k):
        with ag.no_grad():
            flat = np.concatenate([v.data.reshape(-1) for v in self.posterior.sample_stacked(rng, 1).values()])
        return flat[rng.integers(0, flat.size, size=k)]

    def _p_draws(self, rng, k):
        return rng.standard_normal(k)

    def pretrain(self, rng):
        self.trainer.train(self._q_draws, self._p_draws, rng, self.trainer.schedule.pretrain_steps)

    def update(self, rng):
        self.trainer.train(self._q_draws, self._p_draws, rng, self.trainer.schedule.ratio)

    def kl(self, sample, rng):
        flat = ag.concat([ag.reshape(sample[k], (-1,)) for k in sorted(sample)])
        idx = rng.integers(0, flat.shape[0], size=min(self.config.disc_subsample, flat.shape[0]))
        return self.trainer.disc.kl_estimate(flat[idx]) * self.n_weights


def _l2_prior(weights):
    # negative log standard-normal prior, constant dropped
    return 0.5 * sum(ag.tsum(ag.square(w)) for w in weights.values())


def train(config, spec, data=None, hypernet=None, posterior=None, callback=None):
    """Fit a posterior to ``data`` by minimising the minibatch ELBO.

    Returns a ``TrainResult`` whose ``log`` holds one record per step with
    keys step, nll, kl, anneal, loss.
    """
    if config.method == "ensemble":
        return train_ensemble(config, spec, data, config.ensemble_size)
    if config.use_likelihood and (data is None or len(data) == 0):
        raise ContractError("training data must be non-empty")
    init_rng, sample_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))
    if posterior is None:
        posterior = build_posterior(config, spec, init_rng, hypernet)
    params = posterior.parameters()
    opt = Adam(params, config.lr)
    n_train = len(data) if data is not None else 1
    kl_scale = config.kl_scale if config.kl_scale is not None else 1.0 / n_train
    m = config.method
    adversarial = None
    if m == "bbb_avb":
        adversarial = _AdversarialKL(config, posterior, init_rng)
        adversarial.pretrain(sample_rng)

    records = []
    start = time.perf_counter()
    epoch, batches = 0, []
    for step in range(config.steps):
        if config.use_likelihood and not batches:
            batches = batch_iter(n_train, config.batch_size, config.seed, epoch)
            epoch += 1
        anneal = anneal_factor(step, config.steps, config.anneal_fraction)
        term = "sampling"
        try:
            if m in ("bbh", "bbb_kernel"):
                stacked = posterior.sample_stacked(sample_rng, 1 + config.kl_samples)
                weights = _first_sample(stacked)
                term = "kl"
                kl = dv.kernel_kl_from_stacked(_kl_samples(stacked), sample_rng, config.prior_samples)
            elif m == "bbb":
                weights = _first_sample(posterior.sample_stacked(sample_rng, 1))
                term = "kl"
                kl = sum(
                    dv.gaussian_kl_standard_normal(posterior.mu[k], ag.softplus(posterior.rho[k])) for k in posterior.mu
                )
            elif m == "bbb_avb":
                adversarial.update(sample_rng)
                weights = _first_sample(posterior.sample_stacked(sample_rng, 1))
                term = "kl"
                kl = adversarial.kl(weights, sample_rng)
            else:
                weights = _first_sample(posterior.sample_stacked(sample_rng, 1))
                term = "kl"
                kl = _l2_prior(posterior.weights)
            term = "nll"
            if config.use_likelihood:
                idx = batches.pop(0)
                nll = negative_log_likelihood(spec, weights, data.inputs[idx], data.targets[idx], data.is_classification)
            else:
                nll = ag.Tensor(0.0)
            term = "loss"
            loss = elbo_loss(nll, kl, anneal if config.use_likelihood else 1.0, kl_scale)
        except FloatingPointError as exc:
            raise TrainingError(f"non-finite {term} at step {step}: {exc}") from exc
        for name, value in (("nll", nll), ("kl", kl), ("loss", loss)):
            if not np.isfinite(value.item()):
                raise TrainingError(f"non-finite {name} at step {step}")
        try:
            grads = ag.backward(loss, params)
        except FloatingPointError as exc:
            raise TrainingError(f"non-finite gradient at step {step}: {exc}") from exc
        opt.step(grads)
        rec = {"step": step, "nll": nll.item(), "kl": kl.item(), "anneal": anneal, "loss": loss.item()}
        records.append(rec)
        if callback is not None:
            callback(rec)
        if config.log_every and step % config.log_every == 0:
            log.info("step %d loss %.5f nll %.5f kl %.3f anneal %.3f", step, rec["loss"], rec["nll"], rec["kl"], anneal)
    return TrainResult(posterior, records, time.perf_counter() - start)


def train_ensemble(config, spec, data, k):
    """k independent MAP fits with seeds seed, seed+1, ..., seed+k-1."""
    if k < 1:
        raise ContractError("ensemble size must be at least 1")
    members, records = [], []
    start = time.perf_counter()
    for i in range(k):
        cfg = replace(config, method="map", seed=config.seed + i)
        res = train(cfg, spec, data)
        members.append(res.posterior)
        records.extend({**r, "member": i} for r in res.log)
    return TrainResult(EnsemblePosterior(spec, members), records, time.perf_counter() - start)
