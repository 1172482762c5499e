"""Command-line runner: generate, train, measure, bound and sweep.

Every subcommand writes ``config.resolved.json`` beside its outputs; rerunning
that file reproduces the CSVs byte for byte.
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import network as nw
from .augment import LossSpec, make_augmentation, theorem1_bound, verify_firstorder_bound
from .config import dumps_resolved, from_dict, load_config, parse_augment, resolved_dict, with_seed
from .errors import (
    ConfigurationError,
    DivergenceError,
    FormatError,
    NonContinuousAugmentationError,
    UnsupportedActivationError,
)
from .linalg import make_rng
from .manifold import gen_circle, gen_spirals, gen_swiss_roll, load_dataset_dir, load_idx, save_dataset_dir, split
from .rugosity import (
    RugosityReport,
    c_hat,
    jacobian_norm,
    network_handle,
    rugosity_piecewise,
    rugosity_smooth_direct,
    rugosity_smooth_mc,
)
from .train import TRACE_FIELDS, _csv_value, train

INIT_STREAM = 1
AUGMENT_STREAM = 2


# -- building blocks -----------------------------------------------------------


def build_datasets(cfg):
    """(train, test) for the dataset section; synthetic kinds are regenerated from the seed."""
    sec, p = cfg.dataset, cfg.dataset.params
    if sec.kind == "files":
        return load_dataset_dir(p.path)
    if sec.kind == "idx":
        return (
            load_idx(p.images, p.labels, p.limit, p.d),
            load_idx(p.test_images, p.test_labels, p.limit, p.d),
        )
    rng = make_rng(sec.seed, 0)
    if sec.kind == "circle":
        ds = gen_circle(p.D, p.n + p.n_test, p.noise, rng)
    elif sec.kind == "swiss_roll":
        ds = gen_swiss_roll(p.n + p.n_test, p.noise, rng)
    else:
        ds = gen_spirals(p.n + p.n_test, p.noise, rng, p.turns)
    return split(ds, p.n_test, make_rng(sec.seed, 1))


def build_network(cfg, train_ds):
    widths = list(cfg.network.widths)
    if widths[0] != train_ds.dim:
        raise ConfigurationError(f"network.widths starts with {widths[0]}, data has D={train_ds.dim}")
    return nw.init_network(widths, cfg.network.activation, make_rng(cfg.train.seed, 0, INIT_STREAM), cfg.network.slope)


def build_augmentation(cfg, train_ds):
    sec = cfg.augmentation
    if sec.kind == "none":
        return None
    p = sec.params
    rng = make_rng(cfg.train.seed, 0, AUGMENT_STREAM)
    return make_augmentation(sec.kind, train_ds, rng, p.m, p.eps, p.max_shift, p.k)


def loss_spec(cfg):
    return LossSpec(cfg.train.loss, cfg.train.K2)


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _prepare_out(cfg, args_out=None):
    out = args_out or cfg.output.dir
    os.makedirs(out, exist_ok=True)
    cfg.output.dir = out
    _write(os.path.join(out, "config.resolved.json"), dumps_resolved(cfg))
    return out


def run_training(cfg):
    """Train per the config; returns (net, trace, train_ds, test_ds)."""
    train_ds, test_ds = build_datasets(cfg)
    net = build_network(cfg, train_ds)
    aug_set = build_augmentation(cfg, train_ds)
    aug = aug_set if cfg.train.uses_augmented_loss() else None
    net, trace = train(
        net,
        train_ds,
        test_ds,
        cfg.train.train_config(),
        aug=aug,
        loss=loss_spec(cfg),
        rugosity_cfg=cfg.rugosity.rugosity_config() if net.piecewise else None,
        penalty_set=aug_set,
    )
    return net, trace, train_ds, test_ds


# -- measurement ---------------------------------------------------------------


def _estimator(cfg, net):
    est = cfg.rugosity.estimator
    if est == "auto":
        return "piecewise" if net.piecewise else "smooth_mc"
    if est == "piecewise" and not net.piecewise:
        raise ConfigurationError("the piecewise estimator needs a piecewise-affine network")
    if est.startswith("smooth") and net.piecewise:
        raise ConfigurationError(f"the {est} estimator needs a smooth network")
    return est


def measure_reports(cfg, net, train_ds, test_ds):
    """(label, RugosityReport) pairs for both splits, in a fixed order."""
    est = _estimator(cfg, net)
    rows = []
    for split_name, ds in (("train", train_ds), ("test", test_ds)):
        for p in (1, 2):
            rcfg = replace(cfg.rugosity.rugosity_config(), p=p)
            if est == "piecewise":
                rows.append((split_name, rugosity_piecewise(network_handle(net), ds, rcfg)))
            else:
                fn = rugosity_smooth_mc if est == "smooth_mc" else rugosity_smooth_direct
                for k in range(net.output_dim):
                    label = split_name if net.output_dim == 1 else f"{split_name}/out{k}"
                    rows.append((label, fn(network_handle(net, k), ds, rcfg)))
    aug = build_augmentation(cfg, train_ds)
    if net.piecewise and aug is not None and aug.m > 0 and not aug.non_continuous:
        rows.append(("train", c_hat(network_handle(net), train_ds, aug, cfg.rugosity.norm, cfg.rugosity.guard)))
    for split_name, ds in (("train", train_ds), ("test", test_ds)):
        rows.append((split_name, _jacobian(net, ds)))
    return rows


def _jacobian(net, ds):
    if net.piecewise:
        return jacobian_norm(network_handle(net), ds)
    grads = np.stack([nw.input_gradients(net, ds.points, k) for k in range(net.output_dim)], axis=1)
    per_point = np.sqrt(np.sum(grads * grads, axis=(1, 2)))
    report = RugosityReport("jacobian_norm", 0.0, per_point, 1, float("nan"), 0, ds.intrinsic_dim, 0, 0)
    report.value = report.recompute()
    return report


def measure_csv(rows):
    lines = ["split," + RugosityReport.CSV_HEADER]
    for label, report in rows:
        lines.append(f"{label},{report.csv_row()}")
    return "\n".join(lines) + "\n"


# -- subcommands -----------------------------------------------------------------


def cmd_generate(cfg, args):
    out = _prepare_out(cfg, args.out)
    train_ds, test_ds = build_datasets(cfg)
    save_dataset_dir(train_ds, test_ds, out, cfg.dataset.seed)
    print(f"wrote {train_ds.n} train and {test_ds.n} test points to {out}")
    return 0


def cmd_train(cfg, args):
    out = _prepare_out(cfg, args.out)
    net, trace, _, _ = run_training(cfg)
    trace.write(os.path.join(out, "trace.csv"))
    nw.save_network(net, os.path.join(out, "network.txt"))
    last = trace.final
    print(f"epoch {last.epoch}: train_loss={last.train_loss:.6g} train_acc={last.train_acc:.4g} test_acc={last.test_acc:.4g}")
    return 0


def _load_net(args, cfg):
    if not args.network:
        raise ConfigurationError("--network is required")
    net = nw.load_network(args.network)
    if args.rescale is not None:
        net = nw.scale_output(net, args.rescale)
    return net


def cmd_measure(cfg, args):
    net = _load_net(args, cfg)
    out = _prepare_out(cfg, args.out)
    train_ds, test_ds = build_datasets(cfg)
    text = measure_csv(measure_reports(cfg, net, train_ds, test_ds))
    _write(os.path.join(out, "measure.csv"), text)
    sys.stdout.write(text)
    return 0


def cmd_bound(cfg, args):
    net = _load_net(args, cfg)
    out = _prepare_out(cfg, args.out)
    train_ds, _ = build_datasets(cfg)
    aug = build_augmentation(cfg, train_ds)
    if aug is None:
        raise ConfigurationError("bound needs an augmentation section")
    report = theorem1_bound(net, train_ds, aug, loss_spec(cfg))
    res = verify_firstorder_bound(net, train_ds, aug, loss_spec(cfg), report.K1, report.K2)
    _write(os.path.join(out, "bound.json"), report.to_json())
    lines = ["i,j,l_tilde,bound,residual"]
    for i in range(res.residuals.shape[0]):
        for j in range(res.residuals.shape[1]):
            lines.append(f"{i},{j},{res.l_tilde[i, j]:.17g},{res.bound[i, j]:.17g},{res.residuals[i, j]:.17g}")
    _write(os.path.join(out, "residuals.csv"), "\n".join(lines) + "\n")
    print(f"min residual {report.residual_min:.6g}; violations {report.n_violations}/{report.n_pairs}")
    print(f"L_aug={report.L_aug:.6g} rhs={report.rhs:.6g} full bound holds: {report.full_bound_holds}")
    return 1 if report.n_violations else 0


def _sweep_settings(cfg):
    augments = list(cfg.sweep.augment) or [None]
    return [(float(lam), aug) for aug in augments for lam in cfg.sweep.lam]


def _setting_tag(lam, aug):
    return f"lam={lam:g}" + ("" if aug is None else f",aug={aug}")


def _sweep_one(job):
    raw, out_dir = job
    cfg = from_dict(raw)
    net, trace, _, _ = run_training(cfg)
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "config.resolved.json"), dumps_resolved(cfg))
    trace.write(os.path.join(out_dir, "trace.csv"))
    nw.save_network(net, os.path.join(out_dir, "network.txt"))
    return trace.final


def cmd_sweep(cfg, args):
    out = _prepare_out(cfg, args.out)
    jobs, keys = [], []
    for lam, aug in _sweep_settings(cfg):
        for seed in cfg.sweep.seeds:
            run = with_seed(cfg, int(seed))
            run.train.lam = lam
            if aug is not None:
                kind, params = parse_augment(aug)
                run.augmentation.kind = kind
                for key, value in params.items():
                    setattr(run.augmentation.params, key, value)
            tag = _setting_tag(lam, aug)
            run.output.dir = os.path.join(out, "runs", f"{tag}_seed={seed}")
            jobs.append((resolved_dict(run), run.output.dir))
            keys.append((tag, lam, aug or "", int(seed)))
    workers = max(1, int(os.environ.get("RUGOSITY_THREADS", "1")))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            finals = list(pool.map(_sweep_one, jobs))
    else:
        finals = [_sweep_one(job) for job in jobs]

    header = "setting,lam,augment,seed," + ",".join(TRACE_FIELDS)
    lines = [header]
    by_setting = {}
    for (tag, lam, aug, seed), row in zip(keys, finals):
        values = [_csv_value(getattr(row, name)) for name in TRACE_FIELDS]
        lines.append(f"{tag},{lam:.17g},{aug},{seed}," + ",".join(values))
        by_setting.setdefault((tag, lam, aug), []).append(row)
    for (tag, lam, aug), rows in by_setting.items():
        med = [
            _csv_value(float(np.median([float(getattr(r, name)) for r in rows]))) for name in TRACE_FIELDS
        ]
        lines.append(f"{tag},{lam:.17g},{aug},median," + ",".join(med))
    text = "\n".join(lines) + "\n"
    _write(os.path.join(out, "sweep.csv"), text)
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "measure": cmd_measure,
    "bound": cmd_bound,
    "sweep": cmd_sweep,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rugosity", description="Tangent-rugosity experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override dataset, training and measurement seeds")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--augment", help="augmentation override, e.g. translation:2 or tangent_jitter:0.05")
        if name in ("measure", "bound"):
            p.add_argument("--network", help="serialized network file")
            p.add_argument("--rescale", type=float, help="multiply the output layer by this factor")
    return parser


def load_run_config(args):
    cfg = load_config(args.config) if args.config else from_dict({})
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    if args.augment:
        kind, params = parse_augment(args.augment)
        cfg.augmentation.kind = kind
        for key, value in params.items():
            setattr(cfg.augmentation.params, key, value)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
        return COMMANDS[args.command](cfg, args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except (
        ConfigurationError,
        NonContinuousAugmentationError,
        UnsupportedActivationError,
        FormatError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
