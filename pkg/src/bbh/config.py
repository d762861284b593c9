"""Flat ``section.key = value`` experiment configuration.

One assignment per line, ``#`` starts a comment. Unknown keys, duplicate
keys and malformed values are errors; absent keys take the defaults below.
Relative paths are resolved against the directory of the config file.
"""

import os
import re
from dataclasses import dataclass, field, fields

from .errors import ConfigError, ContractError
from .evaluation import DEFAULT_EPSILONS
from .posterior import HypernetConfig
from .training import TrainConfig


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


# key -> (parser, default)
SCHEMA = {
    "train.method": (str, "bbh"),
    "train.lr": (_opt_float, None),
    "train.steps": (int, 1000),
    "train.batch_size": (int, 100),
    "train.kl_samples": (int, 5),
    "train.prior_samples": (int, 5),
    "train.anneal_fraction": (_opt_float, None),
    "train.kl_scale": (_opt_float, None),
    "train.seed": (int, 0),
    "train.ensemble_size": (int, 5),
    "train.dropout_rate": (float, 0.5),
    "train.rho_init": (float, -3.0),
    "train.disc_pretrain": (int, 100),
    "train.disc_ratio": (int, 5),
    "train.disc_subsample": (int, 4096),
    "train.use_likelihood": (_bool, True),
    "train.log_every": (int, 0),
    "net.type": (str, "mlp"),
    "net.extents": (_ints, (784, 64, 10)),
    "net.num_classes": (int, 10),
    "hypernet.architecture": (str, "layer_wise"),
    "hypernet.hidden": (_ints, (64, 256, 512)),
    "hypernet.noise_dim": (int, 1),
    "hypernet.noise_mode": (str, "independent"),
    "eval.samples": (int, 100),
    "eval.epsilons": (_floats, DEFAULT_EPSILONS),
    "eval.attack_examples": (int, 1000),
    "eval.diag_weights": (str, ""),
    "eval.diag_samples": (int, 1000),
    "eval.seed": (int, 12345),
    "data.dataset": (str, "idx"),
    "data.train_images": (str, ""),
    "data.train_labels": (str, ""),
    "data.test_images": (str, ""),
    "data.test_labels": (str, ""),
    "data.outlier_images": (str, ""),
    "data.outlier_labels": (str, ""),
    "data.outlier_count": (int, 1000),
    "data.train_limit": (int, 0),
    "data.test_limit": (int, 0),
    "data.toy_points": (int, 20),
    "data.toy_lo": (float, -4.0),
    "data.toy_hi": (float, 4.0),
    "data.toy_noise": (float, 3.0),
    "data.toy_seed": (int, 0),
    "data.toy_extrapolate": (float, 2.0),
    "output.dir": (str, ""),
    "output.name": (str, ""),
}

PATH_KEYS = {
    "data.train_images",
    "data.train_labels",
    "data.test_images",
    "data.test_labels",
    "data.outlier_images",
    "data.outlier_labels",
    "output.dir",
}

TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


@dataclass
class ExperimentConfig:
    values: dict
    explicit: set = field(default_factory=set)
    source: str = ""

    def __getitem__(self, key):
        return self.values[key]

    @property
    def method(self):
        return self.values["train.method"]

    @property
    def name(self):
        return self.values["output.name"] or self.method

    @property
    def is_toy(self):
        return self.values["data.dataset"] == "toy"

    def train_config(self):
        kwargs = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("train.")}
        return TrainConfig(**kwargs)

    def hypernet_config(self):
        if self.method != "bbh":
            return None
        v = self.values
        return HypernetConfig(v["hypernet.architecture"], v["hypernet.hidden"], v["hypernet.noise_dim"], v["hypernet.noise_mode"])

    def to_text(self):
        """Resolved config as text; parsing it yields the same values."""
        lines = []
        for key in SCHEMA:
            if key.startswith("hypernet.") and self.method != "bbh":
                continue
            lines.append(f"{key} = {_format(self.values[key])}")
        return "\n".join(lines) + "\n"


def _format(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text, base_dir=None):
    """Parse config text into an ``ExperimentConfig``."""
    seen = {}
    values = {k: default for k, (_, default) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key or not key.split(".", 1)[1]:
            raise ConfigError(f"line {lineno}: key {key!r} must look like section.key")
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        parser = SCHEMA[key][0]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: invalid value for {key}: {exc}") from None
        if key in PATH_KEYS and parsed and base_dir and not os.path.isabs(parsed):
            parsed = os.path.normpath(os.path.join(base_dir, parsed))
        values[key] = parsed
    cfg = ExperimentConfig(values, set(seen), text)
    _validate(cfg)
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    cfg = parse_config(text, os.path.dirname(os.path.abspath(path)))
    if not cfg.values["output.dir"]:
        stem = os.path.splitext(os.path.basename(path))[0]
        cfg.values["output.dir"] = os.path.join("runs", stem)
    return cfg


def _validate(cfg):
    v = cfg.values
    hyper_keys = [k for k in cfg.explicit if k.startswith("hypernet.")]
    if hyper_keys and v["train.method"] != "bbh":
        raise ConfigError(f"hypernet section only applies to method bbh, found {sorted(hyper_keys)}")
    for section, build in (("train.", cfg.train_config), ("hypernet.", cfg.hypernet_config)):
        try:
            build()
        except (ContractError, TypeError) as exc:
            raise ConfigError(f"{_field_of(str(exc), section)}{exc}") from None
    if v["net.type"] not in ("mlp", "lenet"):
        raise ConfigError(f"net.type: unknown network {v['net.type']!r}")
    if v["net.type"] == "mlp" and len(v["net.extents"]) < 2:
        raise ConfigError("net.extents: need at least two extents")
    if v["data.dataset"] not in ("toy", "idx"):
        raise ConfigError(f"data.dataset: unknown dataset {v['data.dataset']!r}")
    if v["eval.samples"] < 1:
        raise ConfigError("eval.samples: must be at least 1")
    eps = v["eval.epsilons"]
    if any(e < 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("eval.epsilons: must be non-negative and strictly increasing")
    if not v["data.toy_lo"] < v["data.toy_hi"]:
        raise ConfigError("data.toy_lo: must be below data.toy_hi")


def _field_of(message, section):
    for key in SCHEMA:
        name = key.split(".", 1)[1]
        if key.startswith(section) and re.search(rf"\b{name}\b", message):
            return f"{key}: "
    return ""
