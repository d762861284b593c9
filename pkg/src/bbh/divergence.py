"""KL divergence machinery: the nearest-neighbour sample estimator, its
per-weight (d=1) reduction, the closed-form Gaussian KL, a quadrature
oracle and a discriminator-based density-ratio estimator.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import kernels
from .errors import ContractError
from .optim import Adam

DISTANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class PriorSpec:
    family: str = "standard_normal"

    def __post_init__(self):
        if self.family != "standard_normal":
            raise ContractError(f"unsupported prior family {self.family!r}")

    def sample(self, rng, shape):
        return rng.standard_normal(shape)


def _as_2d(x):
    return x.reshape(-1, 1) if x.ndim == 1 else x


def knn_kl_estimate(w_q, w_p, floor=DISTANCE_FLOOR):
    """Nearest-neighbour estimate of KL(q || p) from samples.

    w_q: (n, d) posterior samples (Tensor or array), w_p: (m, d) prior
    samples. Computes

        d/n * sum_i log( min_j |q_i - p_j| / min_{j != i} |q_i - q_j| ) + log(m / (n - 1))

    with Euclidean distances floored at ``floor``. Differentiable in w_q
    through the selected neighbour pairs.
    """
    q = ag.as_tensor(w_q)
    q = ag.reshape(q, _as_2d(q.data).shape)
    p = _as_2d(np.asarray(w_p.data if isinstance(w_p, ag.Tensor) else w_p, dtype=np.float64))
    n, d = q.shape
    m = p.shape[0]
    if n < 2:
        raise ContractError(f"knn_kl_estimate needs n >= 2 posterior samples, got {n}")
    if m < 1:
        raise ContractError("knn_kl_estimate needs at least one prior sample")
    if p.shape[1] != d:
        raise ContractError(f"sample dimensionality mismatch: {d} vs {p.shape[1]}")
    if d == 1:
        return knn_kl_coordinates(q, p, floor)
    qd = q.data
    dqp = np.sqrt(((qd[:, None, :] - p[None, :, :]) ** 2).sum(-1))
    a = np.argmin(dqp, axis=1)
    dqq = np.sqrt(((qd[:, None, :] - qd[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(dqq, np.inf)
    b = np.argmin(dqq, axis=1)

    def dist(diff):
        sq = ag.tsum(ag.square(diff), axis=1)
        return ag.sqrt(ag.clip_min(sq, floor * floor))

    num = dist(q - p[a])
    den = dist(q - q[b])
    ratio = ag.tsum(ag.log(num) - ag.log(den))
    return ratio * (d / n) + np.log(m / (n - 1))


def knn_kl_coordinates(q, p, floor=DISTANCE_FLOOR):
    """Sum over columns of the d=1 estimator, fused into one tape node.

    q: (n, P) Tensor of posterior draws per scalar coordinate, p: (m, P)
    prior draws. Equivalent to summing ``knn_kl_estimate`` column by
    column.
    """
    q = ag.as_tensor(q)
    p = np.asarray(p, dtype=np.float64)
    if q.ndim != 2 or p.ndim != 2 or q.shape[1] != p.shape[1]:
        raise ContractError(f"knn_kl_coordinates: shapes {q.shape} and {p.shape} do not align")
    n, P = q.shape
    m = p.shape[0]
    if n < 2:
        raise ContractError(f"knn_kl_estimate needs n >= 2 posterior samples, got {n}")
    num, a, den, b = kernels.knn_d1(q.data, p)
    num_ok = num >= floor
    den_ok = den >= floor
    num_f = np.where(num_ok, num, floor)
    den_f = np.where(den_ok, den, floor)
    value = (np.log(num_f).sum() - np.log(den_f).sum()) / n + P * np.log(m / (n - 1))
    cols = np.arange(P)[None, :]

    def bw(g):
        qd = q.data
        s_num = np.sign(qd - p[a, cols]) * num_ok / num_f
        s_den = np.sign(qd - qd[b, cols]) * den_ok / den_f
        grad = s_num - s_den
        np.add.at(grad, (b, np.broadcast_to(cols, b.shape)), s_den)
        return (grad * (g / n),)

    return ag._make(np.asarray(value), (q,), bw, "knn_kl_coordinates")


def kernel_kl_from_stacked(stacked, rng, m=5, prior=PriorSpec()):
    """Per-weight kernel KL given n stacked posterior draws per weight."""
    total = None
    for name in sorted(stacked):
        w = stacked[name]
        n = w.shape[0]
        q = ag.reshape(w, (n, -1))
        p = prior.sample(rng, (m, q.shape[1]))
        term = knn_kl_coordinates(q, p)
        total = term if total is None else total + term
    return total


def per_weight_knn_kl(posterior, rng, n=5, m=5, prior=PriorSpec()):
    """Sum over scalar weights of the d=1 estimator from n posterior and m prior draws."""
    if n < 2:
        raise ContractError(f"per_weight_knn_kl needs n >= 2, got {n}")
    return kernel_kl_from_stacked(posterior.sample_stacked(rng, n), rng, m, prior)


def gaussian_kl_analytical(mu1, sigma1, mu2=0.0, sigma2=1.0):
    """KL(N(mu1, sigma1^2) || N(mu2, sigma2^2)), elementwise on arrays."""
    mu1, sigma1, mu2, sigma2 = (np.asarray(v, dtype=np.float64) for v in (mu1, sigma1, mu2, sigma2))
    if np.any(sigma1 <= 0) or np.any(sigma2 <= 0):
        raise ContractError("standard deviations must be positive")
    out = np.log(sigma2 / sigma1) + (sigma1**2 + (mu1 - mu2) ** 2) / (2 * sigma2**2) - 0.5
    return float(out) if out.ndim == 0 else out


def gaussian_kl_standard_normal(mu, sigma):
    """Summed KL to N(0, 1) as a tape expression in Tensors mu and sigma."""
    return ag.tsum(-ag.log(sigma) + 0.5 * (ag.square(sigma) + ag.square(mu)) - 0.5)


def quadrature_kl_oracle(log_q, log_p, lo, hi, points=100_001):
    """Trapezoidal integral of q (log q - log p) on [lo, hi]."""
    t = np.linspace(lo, hi, int(points))
    lq = log_q(t)
    return float(np.trapezoid(np.exp(lq) * (lq - log_p(t)), t))


def normal_logpdf(mu, sigma):
    def f(t):
        return -0.5 * ((t - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi)

    return f


# ---------------------------------------------------------------------------
# discriminator-based estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscriminatorSchedule:
    pretrain_steps: int = 100
    ratio: int = 5
    hidden: tuple = (64, 64)
    batch: int = 1024
    lr: float = 1e-3


class Discriminator:
    """Scalar-input MLP classifying posterior (1) against prior (0) draws.

    ``logit`` returns the pre-sigmoid output, which equals log(D / (1 - D)).
    """

    def __init__(self, hidden=(64, 64), rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        extents = [1, *hidden, 1]
        self.weights, self.biases = [], []
        for a, b in zip(extents[:-1], extents[1:]):
            self.weights.append(ag.Tensor(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)), requires_grad=True))
            self.biases.append(ag.Tensor(np.zeros(b), requires_grad=True))

    def parameters(self):
        return self.weights + self.biases

    def logit(self, x, frozen=False):
        h = ag.reshape(ag.as_tensor(x), (-1, 1))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if frozen:
                w, b = w.detach(), b.detach()
            h = ag.matmul(h, w) + b
            if i < last:
                h = ag.relu(h)
        return ag.reshape(h, (-1,))

    def prob(self, x):
        with ag.no_grad():
            return ag.sigmoid_np(self.logit(x).data)

    def loss(self, q_samples, p_samples):
        lq = self.logit(q_samples)
        lp = self.logit(p_samples)
        return ag.mean(ag.softplus(-lq)) + ag.mean(ag.softplus(lp))

    def kl_estimate(self, q_samples):
        """Mean of log(D / (1 - D)) over posterior draws, on the tape in q."""
        return ag.mean(self.logit(q_samples, frozen=True))


class DiscriminatorTrainer:
    def __init__(self, schedule=DiscriminatorSchedule(), rng=None):
        self.schedule = schedule
        self.disc = Discriminator(schedule.hidden, rng)
        self.opt = Adam(self.disc.parameters(), schedule.lr)

    def step(self, q_samples, p_samples):
        loss = self.disc.loss(np.asarray(q_samples).reshape(-1), np.asarray(p_samples).reshape(-1))
        self.opt.step(ag.backward(loss, self.disc.parameters()))
        return loss.item()

    def train(self, q_sampler, p_sampler, rng, steps):
        b = self.schedule.batch
        for _ in range(steps):
            self.step(q_sampler(rng, b), p_sampler(rng, b))


def discriminator_kl_estimate(q_sampler, p_sampler, schedule=DiscriminatorSchedule(), rng=None, steps=None, n_eval=None):
    """Train a discriminator between sampler outputs and read off the KL.

    ``q_sampler(rng, k)`` / ``p_sampler(rng, k)`` return k scalar draws.
    Trains for ``steps`` (default: the schedule's pretraining length) and
    returns (estimate, discriminator).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    trainer = DiscriminatorTrainer(schedule, rng)
    trainer.train(q_sampler, p_sampler, rng, schedule.pretrain_steps if steps is None else steps)
    q = q_sampler(rng, n_eval or schedule.batch)
    with ag.no_grad():
        est = trainer.disc.kl_estimate(q).item()
    return est, trainer.disc
