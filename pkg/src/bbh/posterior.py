"""Variational posterior families over the weights of a ``NetworkSpec``.

``HypernetPosterior`` is the implicit posterior: one or more generator
MLPs map unit-Gaussian noise (plus an optional one-hot slice code) to
weights. The remaining families are the baselines it is compared with.

Every family exposes ``parameters()``, ``sample_stacked(rng, S)`` (a dict of
Tensors with a leading sample axis, on the autograd tape) and
``state()`` / ``load_state()`` for checkpointing.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ContractError

ARCHITECTURES = ("single", "layer_wise", "sliced_layer_wise")
NOISE_MODES = ("shared", "independent")


@dataclass(frozen=True)
class HypernetConfig:
    architecture: str = "layer_wise"
    hidden: tuple = (64, 256, 512)
    noise_dim: int = 1
    noise_mode: str = "independent"

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ContractError(f"unknown architecture {self.architecture!r}")
        if self.noise_mode not in NOISE_MODES:
            raise ContractError(f"unknown noise_mode {self.noise_mode!r}")
        if self.noise_dim < 1:
            raise ContractError("noise_dim must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def conditioning_length(self, spec, layer=None):
        if self.architecture == "layer_wise":
            return 0
        if self.architecture == "single":
            return sum(p.n_out for p in spec.param_layers)
        if layer is None:
            raise ContractError("sliced_layer_wise conditioning depends on the layer")
        return _find_layer(spec, layer).n_out


def _find_layer(spec, name):
    for p in spec.param_layers:
        if p.name == name:
            return p
    raise ContractError(f"network has no layer {name!r}")


def _stack_weight(w, S):
    """Repeat a weight tensor along a new leading sample axis."""
    return ag.reshape(w, (1,) + w.shape) * np.ones((S,) + w.shape)


def _init_point_weights(spec, rng):
    weights = {}
    for p in spec.param_layers:
        weights[p.kernel_name] = rng.normal(0.0, 1.0 / np.sqrt(p.fan_in), size=p.kernel_shape)
        weights[p.bias_name] = np.zeros(p.n_out)
    return weights


class Posterior:
    family = "abstract"

    def __init__(self, spec):
        self.spec = spec

    def parameters(self):
        raise NotImplementedError

    def sample_stacked(self, rng, S):
        raise NotImplementedError

    def state(self):
        return {k: t.data for k, t in self._named_parameters().items()}

    def load_state(self, state):
        params = self._named_parameters()
        if set(state) != set(params):
            raise ContractError(f"state keys do not match {self.family} parameters")
        for k, t in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ContractError(f"state {k} has shape {arr.shape}, expected {t.shape}")
            t.data = arr.copy()

    def _named_parameters(self):
        raise NotImplementedError


# ---------------------------------------------------------------------------
# hypernetwork posterior
# ---------------------------------------------------------------------------

class Generator:
    """Dense ReLU MLP with a linear output layer."""

    def __init__(self, n_in, hidden, n_out, rng, out_bias):
        extents = [n_in, *hidden, n_out]
        self.weights, self.biases = [], []
        for i, (a, b) in enumerate(zip(extents[:-1], extents[1:])):
            last = i == len(extents) - 2
            std = 0.01 if last else np.sqrt(2.0 / a)
            self.weights.append(ag.Tensor(rng.normal(0.0, std, size=(a, b)), requires_grad=True))
            bias = out_bias if last else np.zeros(b)
            self.biases.append(ag.Tensor(np.array(bias, dtype=np.float64), requires_grad=True))

    @property
    def n_in(self):
        return self.weights[0].shape[0]

    @property
    def n_out(self):
        return self.weights[-1].shape[1]

    def __call__(self, x):
        h = ag.as_tensor(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ag.matmul(h, w) + b
            if i < last:
                h = ag.relu(h)
        return h

    def parameters(self):
        return [t for pair in zip(self.weights, self.biases) for t in pair]


def _output_bias(fan_in, n_rows, rng):
    # fan-in-scaled kernel entries, zero bias entry, per slice row
    rows = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(n_rows, fan_in + 1))
    rows[:, -1] = 0.0
    return rows


class HypernetPosterior(Posterior):
    family = "hypernet"

    def __init__(self, spec, config=None, rng=None):
        super().__init__(spec)
        self.config = config or HypernetConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        cfg = self.config
        d = cfg.noise_dim
        self.generators = {}
        if cfg.architecture == "single":
            total = cfg.conditioning_length(spec)
            width = max(p.slice_size for p in spec.param_layers)
            bias = _output_bias(width - 1, 1, rng)[0]
            self.generators["single"] = Generator(d + total, cfg.hidden, width, rng, bias)
        else:
            for p in spec.param_layers:
                if cfg.architecture == "layer_wise":
                    bias = _output_bias(p.fan_in, p.n_out, rng).reshape(-1)
                    self.generators[p.name] = Generator(d, cfg.hidden, p.size, rng, bias)
                else:
                    bias = _output_bias(p.fan_in, 1, rng)[0]
                    self.generators[p.name] = Generator(d + p.n_out, cfg.hidden, p.slice_size, rng, bias)

    def parameters(self):
        return [t for g in self.generators.values() for t in g.parameters()]

    def _named_parameters(self):
        named = {}
        for key, g in self.generators.items():
            for i, (w, b) in enumerate(zip(g.weights, g.biases)):
                named[f"gen.{key}.W{i}"] = w
                named[f"gen.{key}.b{i}"] = b
        return named

    def hypernet_generate(self, z, c=None, layer=None):
        """Run one generator call on noise ``z`` and one-hot code ``c``.

        Returns the flattened generated weight (or weight slice) Tensor.
        """
        cfg = self.config
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.size != cfg.noise_dim:
            raise ContractError(f"noise has length {z.size}, expected {cfg.noise_dim}")
        c = np.zeros(0) if c is None else np.asarray(c, dtype=np.float64).reshape(-1)
        if cfg.architecture == "single":
            gen = self.generators["single"]
            expect = cfg.conditioning_length(self.spec)
        else:
            if layer is None:
                layer = self.spec.param_layers[0].name
            _find_layer(self.spec, layer)
            gen = self.generators[layer]
            expect = cfg.conditioning_length(self.spec, layer)
        if c.size != expect:
            raise ContractError(f"conditioning has length {c.size}, expected {expect}")
        if expect and not (np.all((c == 0) | (c == 1)) and c.sum() == 1):
            raise ContractError("conditioning must be one-hot")
        return gen(np.concatenate([z, c])[None, :])[0]

    def _slices(self, noise, S):
        """Generated weights per layer as (S, C_l, fan_in + 1) Tensors."""
        cfg = self.config
        out = {}
        if cfg.architecture == "layer_wise":
            for p in self.spec.param_layers:
                flat = self.generators[p.name](noise[p.name])
                out[p.name] = ag.reshape(flat, (S, p.n_out, p.slice_size))
        elif cfg.architecture == "sliced_layer_wise":
            for p in self.spec.param_layers:
                codes = np.broadcast_to(np.eye(p.n_out), (S, p.n_out, p.n_out))
                inp = np.concatenate([noise[p.name], codes], axis=2).reshape(S * p.n_out, -1)
                flat = self.generators[p.name](inp)
                out[p.name] = ag.reshape(flat, (S, p.n_out, p.slice_size))
        else:
            total = cfg.conditioning_length(self.spec)
            codes = np.broadcast_to(np.eye(total), (S, total, total))
            inp = np.concatenate([noise["single"], codes], axis=2).reshape(S * total, -1)
            gen = self.generators["single"]
            flat = ag.reshape(gen(inp), (S, total, gen.n_out))
            offset = 0
            for p in self.spec.param_layers:
                out[p.name] = flat[:, offset : offset + p.n_out, : p.slice_size]
                offset += p.n_out
        return out

    def sample_stacked(self, rng, S, noise=None):
        if noise is None:
            noise = make_noise(self.config, self.spec, rng, S)
        slices = self._slices(noise, S)
        weights = {}
        for p in self.spec.param_layers:
            s = slices[p.name]
            kernel = ag.transpose(s[:, :, : p.fan_in], (0, 2, 1))
            weights[p.kernel_name] = ag.reshape(kernel, (S,) + tuple(p.kernel_shape))
            weights[p.bias_name] = s[:, :, p.fan_in]
        return weights


def make_noise(config, spec, rng, S=1):
    """Auxiliary noise for S weight samples, keyed by generator.

    Shapes: layer_wise -> (S, d); sliced_layer_wise -> (S, C_l, d);
    single -> (S, C, d). Shared mode reuses one draw per sample across
    every generator call; independent mode draws afresh for each call.
    """
    d = config.noise_dim
    arch = config.architecture
    shared = config.noise_mode == "shared"
    base = rng.standard_normal((S, d)) if shared else None
    noise = {}
    if arch == "layer_wise":
        for p in spec.param_layers:
            noise[p.name] = base if shared else rng.standard_normal((S, d))
    elif arch == "sliced_layer_wise":
        for p in spec.param_layers:
            if shared:
                noise[p.name] = np.broadcast_to(base[:, None, :], (S, p.n_out, d))
            else:
                noise[p.name] = rng.standard_normal((S, p.n_out, d))
    else:
        total = config.conditioning_length(spec)
        if shared:
            noise["single"] = np.broadcast_to(base[:, None, :], (S, total, d))
        else:
            noise["single"] = rng.standard_normal((S, total, d))
    return noise


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def reparam_sample(mu, rho, eps):
    """mu + softplus(rho) * eps, differentiable in mu and rho."""
    return ag.as_tensor(mu) + ag.softplus(rho) * eps


class FactorizedGaussianPosterior(Posterior):
    family = "gaussian"

    def __init__(self, spec, rng=None, rho_init=-3.0):
        super().__init__(spec)
        rng = rng if rng is not None else np.random.default_rng(0)
        init = _init_point_weights(spec, rng)
        self.mu = {k: ag.Tensor(v, requires_grad=True) for k, v in init.items()}
        self.rho = {k: ag.Tensor(np.full(v.shape, float(rho_init)), requires_grad=True) for k, v in init.items()}

    def parameters(self):
        return list(self.mu.values()) + list(self.rho.values())

    def _named_parameters(self):
        named = {f"{k}.mu": t for k, t in self.mu.items()}
        named.update({f"{k}.rho": t for k, t in self.rho.items()})
        return named

    def sigma(self):
        return {k: ag.softplus_np(t.data) for k, t in self.rho.items()}

    def sample_stacked(self, rng, S, eps=None):
        out = {}
        for k in self.mu:
            e = eps[k] if eps is not None else rng.standard_normal((S,) + self.mu[k].shape)
            out[k] = reparam_sample(self.mu[k], self.rho[k], np.broadcast_to(e, (S,) + self.mu[k].shape))
        return out


class PointPosterior(Posterior):
    family = "point"

    def __init__(self, spec, rng=None, weights=None):
        super().__init__(spec)
        if weights is None:
            weights = _init_point_weights(spec, rng if rng is not None else np.random.default_rng(0))
        self.weights = {k: ag.Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in weights.items()}

    def parameters(self):
        return list(self.weights.values())

    def _named_parameters(self):
        return dict(self.weights)

    def sample_stacked(self, rng, S):
        return {k: _stack_weight(w, S) for k, w in self.weights.items()}


class DropoutPosterior(PointPosterior):
    """MC-dropout: inputs of hidden dense layers and conv output channels.

    The dense layer fed directly by the network input is never dropped.
    """

    family = "dropout"

    def __init__(self, spec, rng=None, rate=0.5, weights=None):
        if not 0.0 <= rate < 1.0:
            raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
        super().__init__(spec, rng, weights)
        self.rate = float(rate)

    def sample_stacked(self, rng, S):
        keep = 1.0 - self.rate
        out = {}
        first = self.spec.param_layers[0].name
        for p in self.spec.param_layers:
            kernel = _stack_weight(self.weights[p.kernel_name], S)
            bias = _stack_weight(self.weights[p.bias_name], S)
            if self.rate > 0.0:
                if len(p.kernel_shape) == 2 and p.name != first:
                    mask = (rng.random((S, p.fan_in, 1)) < keep) / keep
                    kernel = kernel * mask
                elif len(p.kernel_shape) == 4:
                    mask = (rng.random((S, p.n_out)) < keep) / keep
                    kernel = kernel * mask[:, None, None, None, :]
                    bias = bias * mask
            out[p.kernel_name] = kernel
            out[p.bias_name] = bias
        return out


class EnsemblePosterior(Posterior):
    family = "ensemble"

    def __init__(self, spec, members):
        super().__init__(spec)
        if not members:
            raise ContractError("an ensemble needs at least one member")
        self.members = list(members)

    def parameters(self):
        return [t for m in self.members for t in m.parameters()]

    def _named_parameters(self):
        return {f"member{i}/{k}": t for i, m in enumerate(self.members) for k, t in m.weights.items()}

    def sample_stacked(self, rng, S):
        """Sample i is member i mod k."""
        out = {}
        for k in self.members[0].weights:
            out[k] = ag.stack([self.members[i % len(self.members)].weights[k] for i in range(S)])
        return out


def unstack(stacked, S):
    return [{k: v[i] for k, v in stacked.items()} for i in range(S)]


def sample_weights(posterior, rng, count):
    """Draw ``count`` WeightSets (dicts of Tensors) from any family."""
    if count < 1:
        raise ContractError("sample count must be at least 1")
    if isinstance(posterior, PointPosterior) and not isinstance(posterior, DropoutPosterior):
        return [dict(posterior.weights) for _ in range(count)]
    return unstack(posterior.sample_stacked(rng, count), count)
