"""Config-driven experiment runner.

    bbh train <config>                       train + evaluate, write all artifacts
    bbh eval <checkpoint> [--outlier PATH]   error / entropy AUCs of a checkpoint
    bbh attack <checkpoint> --eps GRID       FGSM sweep
    bbh diagnose <checkpoint> --weights SEL  posterior histograms + correlations
    bbh toy <config>                         1-D regression run with predictive table
    bbh grid <dir> [--jobs N]                run every *.cfg in a directory
"""

import argparse
import csv
import glob
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import checkpoint as ckpt
from . import data as datamod
from . import evaluation as ev
from . import plots
from .config import load_config, parse_config
from .errors import ConfigError, ContractError, FormatError, TrainingError
from .nets import build_lenet, build_mlp
from .posterior import EnsemblePosterior, PointPosterior
from .training import build_posterior, train

log = logging.getLogger("bbh")

METRICS_HEADER = ["method", "error_pct", "in_auc", "outlier_auc", "runtime_s", "seed"]
TOY_HEADER = ["method", "train_rmse", "std_in", "std_out", "std_ratio", "runtime_s", "seed"]


def build_spec(cfg):
    if cfg["net.type"] == "lenet":
        return build_lenet(cfg["net.num_classes"])
    return build_mlp(cfg["net.extents"])


def build_model(cfg, state=None):
    """Spec and posterior skeleton for a config, optionally loading a state."""
    spec = build_spec(cfg)
    tc = cfg.train_config()
    rng = np.random.default_rng(tc.seed)
    if tc.method == "ensemble":
        post = EnsemblePosterior(spec, [PointPosterior(spec, rng) for _ in range(tc.ensemble_size)])
    else:
        post = build_posterior(tc, spec, rng, cfg.hypernet_config())
    if state is not None:
        post.load_state(state)
    return spec, post


def _require(path, key):
    if not path:
        raise FileNotFoundError(f"{key} is not set in the config")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{key}: dataset file not found: {path}")
    return path


def load_train_test(cfg):
    n_cls = cfg["net.num_classes"]
    train_ds = datamod.load_image_dataset(
        _require(cfg["data.train_images"], "data.train_images"),
        _require(cfg["data.train_labels"], "data.train_labels"),
        "train",
        n_cls,
        cfg["data.train_limit"] or None,
    )
    test_ds = datamod.load_image_dataset(
        _require(cfg["data.test_images"], "data.test_images"),
        _require(cfg["data.test_labels"], "data.test_labels"),
        "test",
        n_cls,
        cfg["data.test_limit"] or None,
    )
    return train_ds, test_ds


def load_outlier(cfg, spec, override=None):
    path = override or cfg["data.outlier_images"]
    n = cfg["data.outlier_count"]
    if path:
        x = datamod.normalize(datamod.load_idx(_require(path, "outlier images")))
        x = x.reshape(len(x), -1)[:n]
        return datamod.Dataset(x, np.zeros(len(x), dtype=np.int64), "outlier", os.path.basename(path), cfg["net.num_classes"])
    return datamod.uniform_noise_images(n, int(np.prod(spec.input_shape)), seed=cfg["eval.seed"])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_diagnostics(out_dir, diag, prefix="diagnostics"):
    hist_rows = []
    for label, (counts, edges) in zip(diag.labels, diag.histograms):
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            hist_rows.append((label, float(lo), float(hi), int(c)))
    hist_path = os.path.join(out_dir, f"{prefix}_hist.csv")
    corr_path = os.path.join(out_dir, f"{prefix}_corr.csv")
    write_csv(hist_path, ["weight", "bin_lo", "bin_hi", "count"], hist_rows)
    write_csv(corr_path, ["weight"] + diag.labels, [[lab] + list(row) for lab, row in zip(diag.labels, diag.correlation)])
    return [hist_path, corr_path]


def write_sweep(out_dir, sweep, title=""):
    csv_path = os.path.join(out_dir, "sweep.csv")
    svg_path = os.path.join(out_dir, "sweep.svg")
    write_csv(csv_path, ["epsilon", "accuracy", "mean_entropy"], sweep.rows())
    plots.emit_plot(svg_path, plots.sweep_svg(sweep, title))
    return [csv_path, svg_path]


def default_selector(spec, k=25):
    first = spec.param_layers[0]
    return f"{first.kernel_name}[0:{min(k, int(np.prod(first.kernel_shape)))}]"


def evaluate_classifier(cfg, spec, posterior, test_ds, outlier_ds, rng):
    S = cfg["eval.samples"]
    res = ev.predictive_distribution(posterior, spec, test_ds.inputs, S, rng)
    out = ev.predictive_distribution(posterior, spec, outlier_ds.inputs, S, rng)
    error_pct = 100.0 * (1.0 - res.accuracy(test_ds.targets))
    return error_pct, ev.entropy_cdf_auc(res.entropy), ev.entropy_cdf_auc(out.entropy)


def _write_log(path, records):
    keys = ["step", "nll", "kl", "anneal", "loss"] + (["member"] if records and "member" in records[0] else [])
    write_csv(path, keys, [[r[k] for k in keys] for r in records])


def _write_manifest(out_dir, files):
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w", encoding="utf-8") as fh:
        for f in sorted(os.path.basename(p) for p in files + [path]):
            fh.write(f + "\n")


def run_toy(cfg, out_dir):
    spec = build_spec(cfg)
    if spec.param_layers[0].fan_in != 1 or spec.output_dim != 1:
        raise ConfigError("net.extents: toy regression needs a 1-input, 1-output network")
    v = cfg.values
    ds = datamod.toy_regression(v["data.toy_points"], v["data.toy_lo"], v["data.toy_hi"], v["data.toy_noise"], v["data.toy_seed"])
    ds = datamod.Dataset(ds.inputs, ds.targets, ds.split, ds.provenance, 0)
    tc = cfg.train_config()
    t0 = time.perf_counter()
    result = train(tc, spec, ds, hypernet=cfg.hypernet_config())
    runtime = time.perf_counter() - t0
    rng = np.random.default_rng(v["eval.seed"])
    ext = v["data.toy_extrapolate"]
    grid = np.linspace(v["data.toy_lo"] - ext, v["data.toy_hi"] + ext, 241)
    mean, std = ev.regression_predictive(result.posterior, spec, grid[:, None], v["eval.samples"], rng)
    mean, std = mean[:, 0], std[:, 0]
    inside = (grid >= v["data.toy_lo"]) & (grid <= v["data.toy_hi"])
    fit_mean, _ = ev.regression_predictive(result.posterior, spec, ds.inputs, v["eval.samples"], rng)
    rmse = float(np.sqrt(np.mean((fit_mean - ds.targets) ** 2)))
    std_in, std_out = float(std[inside].mean()), float(std[~inside].mean())
    files = []
    p = os.path.join(out_dir, "toy_predictive.csv")
    write_csv(p, ["x", "mean", "std"], zip(grid.tolist(), mean.tolist(), std.tolist()))
    files.append(p)
    p = os.path.join(out_dir, "toy_data.csv")
    write_csv(p, ["x", "y"], zip(ds.inputs[:, 0].tolist(), ds.targets[:, 0].tolist()))
    files.append(p)
    p = os.path.join(out_dir, "toy.svg")
    plots.emit_plot(p, plots.toy_svg(grid, mean, std, ds.inputs[:, 0], ds.targets[:, 0], title=cfg.name))
    files.append(p)
    p = os.path.join(out_dir, "toy_metrics.csv")
    ratio = std_out / std_in if std_in > 0 else float("nan")
    write_csv(p, TOY_HEADER, [[cfg.name, rmse, std_in, std_out, ratio, round(runtime, 3), tc.seed]])
    files.append(p)
    p = os.path.join(out_dir, "train_log.csv")
    _write_log(p, result.log)
    files.append(p)
    p = os.path.join(out_dir, "checkpoint.bbh")
    ckpt.save_checkpoint(p, result.posterior, cfg.to_text())
    files.append(p)
    _write_manifest(out_dir, files)
    print(f"{cfg.name}: train_rmse={rmse:.4f} std_in={std_in:.4f} std_out={std_out:.4f} ratio={ratio:.3f} runtime_s={runtime:.1f}")
    return {"method": cfg.name, "std_in": std_in, "std_out": std_out, "ratio": ratio, "rmse": rmse}


def run_classification(cfg, out_dir):
    spec = build_spec(cfg)
    train_ds, test_ds = load_train_test(cfg)
    outlier_ds = load_outlier(cfg, spec)
    tc = cfg.train_config()
    t0 = time.perf_counter()
    result = train(tc, spec, train_ds, hypernet=cfg.hypernet_config())
    runtime = time.perf_counter() - t0
    rng = np.random.default_rng(cfg["eval.seed"])
    error_pct, in_auc, out_auc = evaluate_classifier(cfg, spec, result.posterior, test_ds, outlier_ds, rng)
    files = []
    n_att = min(cfg["eval.attack_examples"], len(test_ds))
    sweep = ev.adversarial_sweep(
        result.posterior, spec, test_ds.inputs[:n_att], test_ds.targets[:n_att], cfg["eval.epsilons"], cfg["eval.samples"], rng
    )
    files += write_sweep(out_dir, sweep, cfg.name)
    selection = ev.parse_selector(cfg["eval.diag_weights"] or default_selector(spec), spec)
    if not isinstance(result.posterior, EnsemblePosterior):
        diag = ev.weight_diagnostics(result.posterior, max(2, cfg["eval.diag_samples"]), selection, rng)
        files += write_diagnostics(out_dir, diag)
    p = os.path.join(out_dir, "train_log.csv")
    _write_log(p, result.log)
    files.append(p)
    p = os.path.join(out_dir, "checkpoint.bbh")
    ckpt.save_checkpoint(p, result.posterior, cfg.to_text())
    files.append(p)
    p = os.path.join(out_dir, "metrics.csv")
    row = [cfg.name, error_pct, in_auc, out_auc, round(runtime, 3), tc.seed]
    write_csv(p, METRICS_HEADER, [row])
    files.append(p)
    _write_manifest(out_dir, files)
    print(f"{cfg.name}: error={error_pct:.2f}% in_auc={in_auc:.3f} outlier_auc={out_auc:.3f} runtime_s={runtime:.1f}")
    return dict(zip(METRICS_HEADER, row), sweep=sweep)


def run_experiment(config_path, out_dir=None):
    """Run one config end to end; returns a process exit code."""
    try:
        run_config(load_config(config_path), out_dir)
    except (ConfigError, ContractError, FormatError, TrainingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def run_config(cfg, out_dir=None):
    out_dir = out_dir or cfg["output.dir"]
    os.makedirs(out_dir, exist_ok=True)
    if cfg.is_toy:
        return run_toy(cfg, out_dir)
    return run_classification(cfg, out_dir)


# ---------------------------------------------------------------------------
# checkpoint subcommands
# ---------------------------------------------------------------------------

def _open(path):
    state, text, _ = ckpt.load_checkpoint(path)
    cfg = parse_config(text)
    spec, post = build_model(cfg, state)
    return cfg, spec, post


def cmd_eval(args):
    cfg, spec, post = _open(args.checkpoint)
    if args.samples:
        cfg.values["eval.samples"] = args.samples
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    _, test_ds = load_train_test(cfg)
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg["eval.seed"])
    error_pct, in_auc, out_auc = evaluate_classifier(cfg, spec, post, test_ds, load_outlier(cfg, spec, args.outlier), rng)
    runtime = time.perf_counter() - t0
    write_csv(os.path.join(out_dir, "eval_metrics.csv"), METRICS_HEADER, [[cfg.name, error_pct, in_auc, out_auc, round(runtime, 3), cfg["train.seed"]]])
    print(f"{cfg.name}: error={error_pct:.2f}% in_auc={in_auc:.3f} outlier_auc={out_auc:.3f}")


def cmd_attack(args):
    cfg, spec, post = _open(args.checkpoint)
    eps = [float(e) for e in args.eps.split(",") if e.strip()] if args.eps else list(cfg["eval.epsilons"])
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    _, test_ds = load_train_test(cfg)
    n = min(args.examples or cfg["eval.attack_examples"], len(test_ds))
    S = args.samples or cfg["eval.samples"]
    sweep = ev.adversarial_sweep(post, spec, test_ds.inputs[:n], test_ds.targets[:n], eps, S, np.random.default_rng(cfg["eval.seed"]))
    write_sweep(out_dir, sweep, cfg.name)
    for e, a, h in sweep.rows():
        print(f"eps={e:.3f} accuracy={a:.4f} entropy={h:.4f}")


def cmd_diagnose(args):
    cfg, spec, post = _open(args.checkpoint)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    if isinstance(post, EnsemblePosterior):
        raise ContractError("diagnostics are defined for single posteriors, not ensembles")
    selection = ev.parse_selector(args.weights or default_selector(spec), spec)
    diag = ev.weight_diagnostics(post, args.samples or cfg["eval.diag_samples"], selection, np.random.default_rng(cfg["eval.seed"]))
    for p in write_diagnostics(out_dir, diag):
        print(p)


def cmd_toy(args):
    cfg = load_config(args.config)
    if not cfg.is_toy:
        raise ConfigError("data.dataset: the toy subcommand needs data.dataset = toy")
    run_config(cfg, args.out)


def _grid_one(job):
    path, out_dir = job
    cfg = load_config(path)
    if "output.dir" not in cfg.explicit:
        cfg.values["output.dir"] = out_dir
    summary = run_config(cfg)
    summary.pop("sweep", None)
    return summary


def cmd_grid(args):
    paths = sorted(glob.glob(os.path.join(args.dir, "*.cfg")))
    if not paths:
        raise ConfigError(f"no *.cfg files in {args.dir}")
    jobs = [(p, os.path.join(args.out or os.path.join(args.dir, "runs"), os.path.splitext(os.path.basename(p))[0])) for p in paths]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_grid_one, jobs))
    else:
        results = [_grid_one(j) for j in jobs]
    out_root = args.out or args.dir
    os.makedirs(out_root, exist_ok=True)
    classif = [r for r in results if "error_pct" in r]
    toy = [r for r in results if "ratio" in r]
    if classif:
        write_csv(os.path.join(out_root, "grid_metrics.csv"), METRICS_HEADER, [[r[k] for k in METRICS_HEADER] for r in classif])
    if toy:
        keys = ["method", "rmse", "std_in", "std_out", "ratio"]
        write_csv(os.path.join(out_root, "grid_toy_metrics.csv"), keys, [[r[k] for k in keys] for r in toy])
    print(format_table(classif or toy))


def format_table(rows):
    if not rows:
        return ""
    if "error_pct" in rows[0]:
        lines = [f"{'':<28}{'Error [%]':>10}{'In AUC':>10}{'Outlier AUC':>13}{'Runtime [s]':>13}"]
        for r in rows:
            lines.append(f"{r['method']:<28}{r['error_pct']:>10.2f}{r['in_auc']:>10.3f}{r['outlier_auc']:>13.3f}{r['runtime_s']:>13.1f}")
    else:
        lines = [f"{'':<28}{'RMSE':>10}{'std in':>10}{'std out':>10}{'ratio':>10}"]
        for r in rows:
            lines.append(f"{r['method']:<28}{r['rmse']:>10.3f}{r['std_in']:>10.3f}{r['std_out']:>10.3f}{r['ratio']:>10.2f}")
    return "\n".join(lines)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="bbh", description="Bayes by Hypernet experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and evaluate a config")
    p.add_argument("config")
    p.add_argument("--out")
    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--outlier", help="IDX image file used as outlier set")
    p.add_argument("--samples", type=int)
    p.add_argument("--out")
    p = sub.add_parser("attack", help="FGSM sweep on a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--eps", help="comma-separated epsilon grid")
    p.add_argument("--examples", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--out")
    p = sub.add_parser("diagnose", help="posterior weight histograms and correlations")
    p.add_argument("checkpoint")
    p.add_argument("--weights", help="selector such as dense0.kernel[0:25]")
    p.add_argument("--samples", type=int)
    p.add_argument("--out")
    p = sub.add_parser("toy", help="toy regression run")
    p.add_argument("config")
    p.add_argument("--out")
    p = sub.add_parser("grid", help="run every config in a directory")
    p.add_argument("dir")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")

    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.command == "train":
            run_config(load_config(args.config), args.out)
        elif args.command == "eval":
            cmd_eval(args)
        elif args.command == "attack":
            cmd_attack(args)
        elif args.command == "diagnose":
            cmd_diagnose(args)
        elif args.command == "toy":
            cmd_toy(args)
        elif args.command == "grid":
            cmd_grid(args)
    except (ConfigError, ContractError, FormatError, TrainingError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
