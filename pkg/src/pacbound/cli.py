"""Command-line pipeline: train, optimize-bound, certify, pathnorm, report.

Each command reads a layered configuration (defaults -> --config file ->
flags), writes its artifacts under the run directory, and records the fully
resolved config plus a digest in the run manifest, so any certified number
can be reproduced from the manifest alone.

Exit codes: 0 success; 1 certified bound vacuous (without --allow-vacuous);
2 configuration error; 3 data/checkpoint error; 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import persist
from .boundopt import (
    BoundOptDiverged,
    PriorSpec,
    initial_state,
    optimize_bound,
)
from .certify import certify, snn_pvalue
from .config import (
    ConfigError,
    DATA_DIR_ENV,
    ExperimentConfig,
    load_config,
    parse_schedule,
    standard_deviations,
)
from .data import DataError, IdxFormatError, load_mnist, randomize_labels, synthetic_blobs
from .nn import NonFiniteError, init_weights, parse_arch
from .pathnorm import train_pathnorm_regularized
from .persist import CheckpointError
from .sgd import TrainingDiverged, train_sgd

EXIT_OK = 0
EXIT_VACUOUS = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_experiment_data(cfg: ExperimentConfig):
    """Resolve (train, test) datasets according to the config."""
    if cfg.data_source == "synthetic":
        arch = parse_arch(cfg.arch)
        train = synthetic_blobs(cfg.synthetic_m, cfg.seed, input_dim=arch.input_dim)
        test = synthetic_blobs(cfg.synthetic_m, cfg.seed + 1, input_dim=arch.input_dim)
    else:
        train, test = load_mnist(cfg.resolve_data_dir())
    if cfg.train_subset is not None:
        train = train.head(cfg.train_subset)
    if cfg.labels == "random":
        train = randomize_labels(train, cfg.seed)
    return train, test


def _update_manifest(out_dir: Path, cfg: ExperimentConfig, command: str, artifacts: dict):
    path = out_dir / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"commands": []}
    manifest["config"] = cfg.to_dict()
    manifest["config_digest"] = cfg.digest()
    manifest["deviations"] = standard_deviations(cfg)
    manifest["commands"].append({"command": command, "artifacts": artifacts})
    out_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def _resolved_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "name": getattr(args, "name", None),
        "arch": getattr(args, "arch", None),
        "labels": getattr(args, "labels", None),
        "seed": getattr(args, "seed", None),
        "data_dir": getattr(args, "data_dir", None),
        "out_dir": getattr(args, "out", None),
        "train_subset": getattr(args, "train_subset", None),
        "data_source": getattr(args, "data_source", None),
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "epochs", None) is not None:
        cfg.sgd.epochs = args.epochs
    if getattr(args, "lr", None) is not None:
        cfg.sgd.learning_rate = args.lr
    if getattr(args, "momentum", None) is not None:
        cfg.sgd.momentum = args.momentum
    if getattr(args, "batch_size", None) is not None:
        cfg.sgd.batch_size = args.batch_size
    if getattr(args, "schedule", None) is not None:
        cfg.bound.schedule = parse_schedule(args.schedule)
    if getattr(args, "iters", None) is not None:
        lr = args.bound_lr if getattr(args, "bound_lr", None) is not None else 1e-3
        cfg.bound.schedule = ((args.iters, lr),)
    elif getattr(args, "bound_lr", None) is not None:
        cfg.bound.schedule = tuple(
            (iters, args.bound_lr) for iters, _ in cfg.bound.schedule
        )
    if getattr(args, "minibatch", None) is not None:
        cfg.bound.batch_size = args.minibatch
    if getattr(args, "objective", None) is not None:
        cfg.bound.objective = args.objective
    if getattr(args, "sigma_init_scale", None) is not None:
        cfg.bound.sigma_init_scale = args.sigma_init_scale
    elif cfg.labels == "random" and cfg.bound.sigma_init_scale == 1.0:
        cfg.bound.sigma_init_scale = 0.1  # narrower start for random labels
    if getattr(args, "mc_samples", None) is not None:
        cfg.eval.mc_samples = args.mc_samples
    if getattr(args, "delta_prime", None) is not None:
        cfg.eval.delta_prime = args.delta_prime
    if getattr(args, "reg", None) is not None:
        cfg.pathnorm.reg = args.reg
    if getattr(args, "pathnorm_lr", None) is not None:
        cfg.pathnorm.learning_rate = args.pathnorm_lr
    if getattr(args, "pathnorm_epochs", None) is not None:
        cfg.pathnorm.epochs = args.pathnorm_epochs
    if getattr(args, "init_sigma", None) is not None:
        cfg.pathnorm.init_sigma = args.init_sigma
    cfg.sgd.shuffle_seed = cfg.seed
    cfg.bound.noise_seed = cfg.seed
    return cfg


def _print_config_and_exit(cfg: ExperimentConfig):
    print(json.dumps({**cfg.to_dict(), "digest": cfg.digest()}, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    if args.print_config:
        return _print_config_and_exit(cfg)
    out_dir = Path(cfg.out_dir)
    train, test = _load_experiment_data(cfg)
    arch = parse_arch(cfg.arch)
    w0 = init_weights(arch, cfg.init_sigma, cfg.seed)

    resume_path = out_dir / "sgd.npz"
    if args.resume and resume_path.exists():
        ckpt_arch, w_start, velocity, epoch, _, w_init = persist.load_sgd_checkpoint(resume_path)
        if ckpt_arch != arch:
            raise CheckpointError(
                f"checkpoint architecture {ckpt_arch.layer_widths} does not match "
                f"config {arch.layer_widths}"
            )
        w0 = w_init if w_init is not None else w0
        result = train_sgd(
            arch, w_start, train, cfg.sgd, test_data=test,
            start_epoch=epoch, velocity=velocity,
        )
    else:
        result = train_sgd(arch, w0, train, cfg.sgd, test_data=test)

    persist.save_sgd_checkpoint(
        out_dir / "sgd.npz", arch, result.weights, result.velocity,
        cfg.sgd.epochs, cfg.sgd, w_init=w0,
    )
    persist.write_csv(
        out_dir / "sgd_history.csv",
        ["epoch", "train_surrogate", "train_error", "test_error"],
        [dataclasses.asdict(row) for row in result.history],
    )
    _update_manifest(out_dir, cfg, "train", {"checkpoint": "sgd.npz", "history": "sgd_history.csv"})
    last = result.history[-1]
    print(
        f"trained {cfg.arch} for {cfg.sgd.epochs} epochs: "
        f"train error {last.train_error:.4f}, test error "
        f"{'n/a' if last.test_error is None else f'{last.test_error:.4f}'}"
    )
    return EXIT_OK


def cmd_optimize_bound(args) -> int:
    cfg = _resolved_config(args)
    if args.print_config:
        return _print_config_and_exit(cfg)
    out_dir = Path(cfg.out_dir)
    sgd_path = Path(args.sgd_ckpt) if args.sgd_ckpt else out_dir / "sgd.npz"
    arch, w_sgd, _, _, _, w_init = persist.load_sgd_checkpoint(sgd_path)
    if parse_arch(cfg.arch) != arch:
        raise CheckpointError(
            f"checkpoint architecture {arch.layer_widths} does not match config {cfg.arch}"
        )
    if w_init is None:
        raise CheckpointError(f"{sgd_path} does not carry the initial weights")
    train, _ = _load_experiment_data(cfg)
    prior = PriorSpec(
        w0=w_init, m=train.m, b=cfg.prior.b, c=cfg.prior.c, delta=cfg.prior.delta
    )

    posterior_path = out_dir / "posterior.npz"
    if args.resume and posterior_path.exists():
        # keep the freshly resolved schedule/flags; the checkpoint supplies
        # the optimizer state and prior so iterations continue bit-exactly
        state, prior, _ = persist.load_posterior_checkpoint(posterior_path)
    else:
        state = initial_state(arch, w_sgd, prior, cfg.bound)
    posterior, rho, trace = optimize_bound(
        arch, w_sgd, train, prior, cfg.bound, state=state
    )
    persist.save_posterior_checkpoint(posterior_path, state, prior, cfg.bound)

    rows = [
        {
            "iteration": int(trace["iteration"][i]),
            "objective": trace["objective"][i],
            "surrogate": trace["surrogate"][i],
            "penalty": trace["penalty"][i],
            "b_re": trace["b_re"][i],
            "kl": trace["kl"][i],
        }
        for i in range(len(trace["iteration"]))
    ]
    trace_path = out_dir / "bound_trace.csv"
    persist.write_csv(
        trace_path, ["iteration", "objective", "surrogate", "penalty", "b_re", "kl"], rows
    )
    _update_manifest(
        out_dir, cfg, "optimize-bound",
        {"posterior": "posterior.npz", "trace": "bound_trace.csv"},
    )
    if rows:
        print(
            f"optimized bound for {cfg.bound.total_iterations} iterations: "
            f"final objective sample {rows[-1]['objective']:.4f}, "
            f"B_RE {rows[-1]['b_re']:.4f}"
        )
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = _resolved_config(args)
    if args.print_config:
        return _print_config_and_exit(cfg)
    out_dir = Path(cfg.out_dir)
    posterior_path = Path(args.posterior) if args.posterior else out_dir / "posterior.npz"
    state, prior, bound_cfg = persist.load_posterior_checkpoint(posterior_path)
    sgd_path = Path(args.sgd_ckpt) if args.sgd_ckpt else out_dir / "sgd.npz"
    _, w_sgd, _, _, _, _ = persist.load_sgd_checkpoint(sgd_path)
    train, test = _load_experiment_data(cfg)

    # deviation notes must describe the run that produced the posterior
    cfg.bound = bound_cfg
    deviations = standard_deviations(cfg)
    report = certify(
        name=cfg.name,
        posterior=state.posterior(),
        rho=state.rho,
        prior=prior,
        train=train,
        w_sgd=w_sgd,
        test=test,
        n=cfg.eval.mc_samples,
        delta_prime=cfg.eval.delta_prime,
        mc_seed=cfg.seed,
        config_digest=cfg.digest(),
        deviations=tuple(deviations),
    )
    persist.write_report_json(out_dir / "report.json", report, config=cfg.to_dict())
    persist.write_report_csv(out_dir / "report.csv", [report.to_dict()])
    if args.pvalue:
        pvalue = snn_pvalue(
            w_sgd, state.posterior(), n=cfg.eval.pvalue_samples, seed=cfg.seed
        )
        print(f"p-value of pretrained weights under the posterior: {pvalue}")
    _update_manifest(
        out_dir, cfg, "certify", {"report": "report.json", "report_csv": "report.csv"}
    )
    print(
        f"{report.name}: certified bound {report.pac_bayes_bound:.4f} "
        f"(B_RE {report.b_re:.4f}, KL {report.kl_divergence:.1f}, "
        f"holds with prob {report.total_confidence})"
        + ("  [VACUOUS: reporting sqrt(B_RE/2)]" if report.vacuous else "")
    )
    if report.vacuous and not args.allow_vacuous:
        return EXIT_VACUOUS
    return EXIT_OK


def cmd_pathnorm(args) -> int:
    cfg = _resolved_config(args)
    if args.print_config:
        return _print_config_and_exit(cfg)
    out_dir = Path(cfg.out_dir)
    train, test = _load_experiment_data(cfg)
    arch = parse_arch(cfg.arch)
    w0 = init_weights(arch, cfg.pathnorm.init_sigma, cfg.seed)
    sgd_cfg = dataclasses.replace(
        cfg.sgd,
        learning_rate=cfg.pathnorm.learning_rate,
        epochs=cfg.pathnorm.epochs,
        batch_size=cfg.pathnorm.batch_size,
    )
    w, history = train_pathnorm_regularized(
        arch, w0, train, sgd_cfg, cfg.pathnorm.reg,
        test_data=test, eval_every=cfg.pathnorm.eval_every,
        delta=cfg.prior.delta,
    )
    rows = []
    for point in history:
        row = dataclasses.asdict(point)
        quantiles = row.pop("margin_quantiles")
        for q, value in zip((5, 25, 50, 75, 95), quantiles):
            row[f"margin_q{q}"] = value
        rows.append(row)
    trace_path = out_dir / "pathnorm_trace.csv"
    persist.write_csv(trace_path, list(rows[0].keys()), rows)
    _update_manifest(out_dir, cfg, "pathnorm", {"trace": "pathnorm_trace.csv"})
    last = history[-1]
    print(
        f"pathnorm run (reg={cfg.pathnorm.reg}): final train error "
        f"{last.train_error:.4f}, phi1 {last.phi1:.4g}, margin bound "
        f"{last.margin_bound:.4f} (optimistic; vacuous={last.margin_bound >= 1})"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    payloads = []
    for run_dir in args.runs:
        report_path = Path(run_dir) / "report.json"
        if not report_path.exists():
            raise DataError(f"no report.json in {run_dir}")
        payloads.append(persist.load_report_json(report_path))
    persist.write_report_csv(args.out, payloads)
    print(f"wrote {len(payloads)} report rows to {args.out}")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--name", help="experiment name")
    parser.add_argument("--arch", help="layer widths, e.g. 784,600,1")
    parser.add_argument("--labels", choices=["true", "random"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--data-dir", dest="data_dir", help=f"defaults to ${DATA_DIR_ENV}")
    parser.add_argument("--data-source", dest="data_source", choices=["mnist", "synthetic"])
    parser.add_argument("--train-subset", dest="train_subset", type=int,
                        help="use only the first k training rows")
    parser.add_argument("--out", help="run directory")
    parser.add_argument("--print-config", action="store_true",
                        help="print the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pacbound",
        description="PAC-Bayes bound pipeline for stochastic ReLU networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="SGD pretraining")
    _add_common(p_train)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--momentum", type=float)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--resume", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_opt = sub.add_parser("optimize-bound", help="optimize the PAC-Bayes objective")
    _add_common(p_opt)
    p_opt.add_argument("--sgd-ckpt", dest="sgd_ckpt", help="trained checkpoint (default: <out>/sgd.npz)")
    p_opt.add_argument("--schedule", help="phases like 150000:0.001,50000:0.0001")
    p_opt.add_argument("--iters", type=int, help="single-phase iteration count")
    p_opt.add_argument("--bound-lr", dest="bound_lr", type=float)
    p_opt.add_argument("--minibatch", type=int, help="mini-batch size (default: full batch)")
    p_opt.add_argument("--objective", choices=["quad", "linear"])
    p_opt.add_argument("--sigma-init-scale", dest="sigma_init_scale", type=float)
    p_opt.add_argument("--resume", action="store_true")
    p_opt.set_defaults(func=cmd_optimize_bound)

    p_cert = sub.add_parser("certify", help="compute the final certified bound")
    _add_common(p_cert)
    p_cert.add_argument("--posterior", help="posterior checkpoint (default: <out>/posterior.npz)")
    p_cert.add_argument("--sgd-ckpt", dest="sgd_ckpt")
    p_cert.add_argument("--mc-samples", dest="mc_samples", type=int)
    p_cert.add_argument("--delta-prime", dest="delta_prime", type=float)
    p_cert.add_argument("--allow-vacuous", dest="allow_vacuous", action="store_true")
    p_cert.add_argument("--pvalue", action="store_true",
                        help="also estimate the pretrained weights' p-value")
    p_cert.set_defaults(func=cmd_certify)

    p_path = sub.add_parser("pathnorm", help="path-norm margin-bound experiment")
    _add_common(p_path)
    p_path.add_argument("--reg", type=float, help="path-norm regularization strength")
    p_path.add_argument("--pathnorm-lr", dest="pathnorm_lr", type=float)
    p_path.add_argument("--pathnorm-epochs", dest="pathnorm_epochs", type=int)
    p_path.add_argument("--init-sigma", dest="init_sigma", type=float)
    p_path.set_defaults(func=cmd_pathnorm)

    p_report = sub.add_parser("report", help="aggregate run reports into one CSV")
    p_report.add_argument("runs", nargs="+", help="run directories with report.json")
    p_report.add_argument("--out", default="reports.csv")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IdxFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, BoundOptDiverged, NonFiniteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
