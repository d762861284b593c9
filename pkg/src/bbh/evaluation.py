"""Uncertainty evaluation: posterior-averaged prediction, normalised
predictive entropy, entropy-CDF AUC, FGSM sweeps and weight diagnostics.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ContractError
from .nets import apply_network
from .posterior import EnsemblePosterior, PointPosterior, DropoutPosterior

DEFAULT_EPSILONS = tuple(round(0.05 * i, 2) for i in range(9))


@dataclass
class PredictiveResult:
    probs: np.ndarray
    samples: int
    entropy: np.ndarray

    @property
    def predictions(self):
        return self.probs.argmax(axis=1)

    def accuracy(self, labels):
        return float(np.mean(self.predictions == np.asarray(labels)))


@dataclass
class AdversarialSweep:
    epsilons: list
    accuracy: list = field(default_factory=list)
    entropy: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.epsilons, self.accuracy, self.entropy))


def _is_point(posterior):
    return isinstance(posterior, PointPosterior) and not isinstance(posterior, DropoutPosterior)


def _effective_samples(posterior, S):
    if _is_point(posterior):
        return 1
    if isinstance(posterior, EnsemblePosterior):
        return len(posterior.members)
    return S


def _weight_draws(posterior, rng, S, chunk=10):
    """Yield WeightSets of plain arrays, generating at most ``chunk`` at a time."""
    S = _effective_samples(posterior, S)
    done = 0
    while done < S:
        k = min(chunk, S - done)
        if isinstance(posterior, EnsemblePosterior):
            batch = [{n: w.data for n, w in m.weights.items()} for m in posterior.members[done : done + k]]
        else:
            with ag.no_grad():
                stacked = posterior.sample_stacked(rng, k)
            batch = [{n: v.data[i] for n, v in stacked.items()} for i in range(k)]
        done += k
        # the consumer may record a graph between draws, so no_grad must not span the yield
        yield from batch


def predictive_entropy(probs, normalize=True):
    """Shannon entropy (0 log 0 := 0) of one or many categorical rows.

    Normalised entropies are divided by log C.
    """
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0):
        raise ContractError("probabilities must be non-negative")
    logs = np.log(np.where(p > 0, p, 1.0))
    h = -(p * logs).sum(axis=-1)
    if normalize:
        h = h / np.log(p.shape[-1])
    h = np.maximum(h, 0.0)
    return float(h) if np.ndim(h) == 0 else h


def predictive_distribution(posterior, spec, inputs, S, rng, batch_size=1000):
    """Mean over S weight draws of the softmax outputs."""
    if S < 1:
        raise ContractError("S must be at least 1")
    x = np.asarray(inputs, dtype=np.float64)
    total = None
    count = 0
    for weights in _weight_draws(posterior, rng, S):
        probs = np.concatenate(
            [ag.softmax_np(apply_network(spec, weights, x[i : i + batch_size]).data) for i in range(0, len(x), batch_size)]
        )
        total = probs if total is None else total + probs
        count += 1
    probs = total / count
    return PredictiveResult(probs, count, predictive_entropy(probs, normalize=True))


def regression_predictive(posterior, spec, inputs, S, rng):
    """Mean and standard deviation of network outputs over S weight draws."""
    x = np.asarray(inputs, dtype=np.float64)
    outs = np.stack([apply_network(spec, w, x).data for w in _weight_draws(posterior, rng, S)])
    return outs.mean(axis=0), outs.std(axis=0)


def entropy_cdf_auc(entropies):
    """Area under the empirical CDF of entropies on [0, 1].

    Integrates F(t) = #{e <= t} / N exactly; each e contributes (1 - e).
    """
    e = np.asarray(entropies, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise ContractError("entropy_cdf_auc needs at least one value")
    if np.any(e < 0) or np.any(e > 1):
        raise ContractError("entropies must lie in [0, 1]")
    return float(np.mean(1.0 - e))


def input_gradient_sign(posterior, spec, x, y, S, rng, batch_size=1000):
    """sign of the posterior-averaged input gradient of the cross-entropy."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    g = np.zeros_like(x)
    for weights in _weight_draws(posterior, rng, S):
        for i in range(0, len(x), batch_size):
            xt = ag.Tensor(x[i : i + batch_size], requires_grad=True)
            loss = ag.softmax_cross_entropy(apply_network(spec, weights, xt), y[i : i + batch_size], reduction="sum")
            g[i : i + batch_size] += ag.backward(loss, [xt])[xt]
    return np.sign(g)


def fgsm_attack(posterior, spec, x, y, eps, S, rng):
    """x_adv = clip(x + eps * sign(mean_s grad_x CE), 0, 1); sign(0) = 0."""
    if eps < 0:
        raise ContractError("eps must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if eps == 0:
        return x.copy()
    return np.clip(x + eps * input_gradient_sign(posterior, spec, x, y, S, rng), 0.0, 1.0)


def adversarial_sweep(posterior, spec, x, y, epsilons=DEFAULT_EPSILONS, S=100, rng=None):
    """Accuracy and mean normalised entropy under FGSM for each epsilon.

    The attack direction is computed once on the clean inputs; each epsilon
    then scales it.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    eps = [float(e) for e in epsilons]
    if any(e < 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
        raise ContractError("epsilons must be non-negative and strictly increasing")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    direction = input_gradient_sign(posterior, spec, x, y, S, rng) if any(e > 0 for e in eps) else None
    sweep = AdversarialSweep(eps)
    for e in eps:
        x_adv = x if e == 0 else np.clip(x + e * direction, 0.0, 1.0)
        res = predictive_distribution(posterior, spec, x_adv, S, rng)
        sweep.accuracy.append(res.accuracy(y))
        sweep.entropy.append(float(np.mean(res.entropy)))
    return sweep


# ---------------------------------------------------------------------------
# posterior diagnostics
# ---------------------------------------------------------------------------

_SELECTOR = re.compile(r"^\s*([\w.]+)\s*(?:\[\s*(\d*)\s*:\s*(\d*)\s*\])?\s*$")


def parse_selector(text, spec):
    """``name[a:b]`` (flat coordinate range) or ``name`` (all); comma-separated."""
    shapes = spec.weight_shapes()
    selection = []
    for part in text.split(","):
        if not part.strip():
            continue
        mt = _SELECTOR.match(part)
        if not mt or mt.group(1) not in shapes:
            raise ContractError(f"bad weight selector {part.strip()!r}; known weights: {sorted(shapes)}")
        size = int(np.prod(shapes[mt.group(1)]))
        lo = int(mt.group(2)) if mt.group(2) else 0
        hi = int(mt.group(3)) if mt.group(3) else size
        if not 0 <= lo < hi <= size:
            raise ContractError(f"selector range [{lo}:{hi}] out of bounds for {mt.group(1)} ({size})")
        selection.append((mt.group(1), np.arange(lo, hi)))
    if not selection:
        raise ContractError("empty weight selector")
    return selection


@dataclass
class Diagnostics:
    labels: list
    samples: np.ndarray
    histograms: list
    correlation: np.ndarray


def correlation_matrix(samples):
    """Pearson correlation of columns; zero-variance columns correlate 0."""
    x = np.asarray(samples, dtype=np.float64)
    xc = x - x.mean(axis=0)
    sd = np.sqrt((xc * xc).mean(axis=0))
    ok = sd > 1e-12 * np.maximum(1.0, np.abs(x).max(axis=0))
    z = np.zeros_like(xc)
    z[:, ok] = xc[:, ok] / sd[ok]
    corr = (z.T @ z) / len(x)
    idx = np.flatnonzero(ok)
    corr[idx, idx] = 1.0
    return np.clip(corr, -1.0, 1.0)


def weight_diagnostics(posterior, S, selection, rng=None, bins=64):
    """Per-coordinate histograms and the correlation matrix over S draws.

    ``selection`` is a list of (weight name, flat coordinate indices).
    """
    if S < 2:
        raise ContractError("weight diagnostics need S >= 2")
    rng = rng if rng is not None else np.random.default_rng(0)
    labels, columns = [], []
    draws = list(_weight_draws(posterior, rng, S)) if not _is_point(posterior) else [
        {n: w.data for n, w in posterior.weights.items()}
    ] * S
    for name, idx in selection:
        col = np.stack([d[name].reshape(-1)[idx] for d in draws])
        columns.append(col)
        labels.extend(f"{name}[{i}]" for i in idx)
    samples = np.concatenate(columns, axis=1)
    hists = []
    for j in range(samples.shape[1]):
        v = samples[:, j]
        lo, hi = float(v.min()), float(v.max())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        hists.append(np.histogram(v, bins=bins, range=(lo, hi)))
    return Diagnostics(labels, samples, hists, correlation_matrix(samples))
