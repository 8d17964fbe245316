"""Versioned on-disk containers: dataset cache, training checkpoints,
posterior checkpoints, and report files.

Everything is an .npz archive holding the raw float64 arrays (bit-exact
round trips) plus one JSON metadata entry with a `kind` and `version` field.
Reports are additionally emitted as JSON and as one-row CSV.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .boundopt import BoundOptConfig, BoundOptState, GaussianPosterior, PriorSpec
from .certify import BoundReport
from .data import LabeledDataset
from .nn import MlpArchitecture
from .sgd import SgdConfig

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """A container file is missing, malformed, or of the wrong kind."""


def _save(path, kind: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(
        json.dumps({"kind": kind, "version": FORMAT_VERSION, **meta}).encode("utf-8"),
        dtype=np.uint8,
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **payload)


def _load(path, kind: str) -> tuple[dict, np.lib.npyio.NpzFile]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such file: {path}")
    archive = np.load(path, allow_pickle=False)
    if "__meta__" not in archive:
        raise CheckpointError(f"{path} is not a pacbound container")
    meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
    if meta.get("kind") != kind:
        raise CheckpointError(
            f"{path} holds a {meta.get('kind')!r} container, expected {kind!r}"
        )
    if meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {meta.get('version')}, expected {FORMAT_VERSION}"
        )
    return meta, archive


def save_dataset(path, dataset: LabeledDataset) -> None:
    _save(
        path,
        "dataset",
        {"features": dataset.features, "labels": dataset.labels},
        {"provenance": dataset.provenance, "label_seed": dataset.label_seed},
    )


def load_dataset(path) -> LabeledDataset:
    meta, archive = _load(path, "dataset")
    return LabeledDataset(
        archive["features"],
        archive["labels"],
        provenance=meta["provenance"],
        label_seed=meta["label_seed"],
    )


def save_sgd_checkpoint(
    path,
    arch: MlpArchitecture,
    w: np.ndarray,
    velocity: np.ndarray,
    epoch: int,
    cfg: SgdConfig,
    w_init: np.ndarray | None = None,
) -> None:
    arrays = {"w": np.asarray(w), "velocity": np.asarray(velocity)}
    if w_init is not None:
        arrays["w_init"] = np.asarray(w_init)
    _save(
        path,
        "sgd-checkpoint",
        arrays,
        {
            "arch": list(arch.layer_widths),
            "epoch": epoch,
            "config": dataclasses.asdict(cfg),
        },
    )


def load_sgd_checkpoint(path):
    meta, archive = _load(path, "sgd-checkpoint")
    arch = MlpArchitecture(tuple(meta["arch"]))
    w_init = archive["w_init"] if "w_init" in archive else None
    return (
        arch,
        archive["w"],
        archive["velocity"],
        int(meta["epoch"]),
        SgdConfig(**meta["config"]),
        w_init,
    )


def save_posterior_checkpoint(
    path,
    state: BoundOptState,
    prior: PriorSpec,
    cfg: BoundOptConfig,
) -> None:
    _save(
        path,
        "posterior-checkpoint",
        {"params": state.params, "rms": state.rms, "w0": prior.w0},
        {
            "arch": list(state.arch.layer_widths),
            "iteration": state.iteration,
            "clamp_events": state.clamp_events,
            "prior": {
                "m": prior.m,
                "b": prior.b,
                "c": prior.c,
                "delta": prior.delta,
            },
            "config": {
                **dataclasses.asdict(cfg),
                "schedule": [list(phase) for phase in cfg.schedule],
            },
        },
    )


def load_posterior_checkpoint(path):
    meta, archive = _load(path, "posterior-checkpoint")
    arch = MlpArchitecture(tuple(meta["arch"]))
    state = BoundOptState(
        arch=arch,
        params=archive["params"].copy(),
        rms=archive["rms"].copy(),
        iteration=int(meta["iteration"]),
        clamp_events=int(meta["clamp_events"]),
    )
    prior = PriorSpec(w0=archive["w0"], **meta["prior"])
    config_meta = dict(meta["config"])
    config_meta["schedule"] = tuple(
        (int(iters), float(lr)) for iters, lr in config_meta["schedule"]
    )
    cfg = BoundOptConfig(**config_meta)
    return state, prior, cfg


def posterior_from_checkpoint(path) -> tuple[GaussianPosterior, float]:
    state, _, _ = load_posterior_checkpoint(path)
    return state.posterior(), state.rho


def write_report_json(path, report: BoundReport, config: dict | None = None) -> None:
    """Emit the report; `config` embeds the fully resolved experiment config
    (including seeds) so the certified numbers can be reproduced from the
    report alone."""
    payload = report.to_dict()
    if config is not None:
        payload["config"] = config
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")


def load_report_json(path) -> dict:
    return json.loads(Path(path).read_text())


REPORT_CSV_FIELDS = [
    "name",
    "arch",
    "train_error",
    "test_error",
    "snn_train_error_bound",
    "snn_test_error_bound",
    "pac_bayes_bound",
    "reported_value",
    "vacuous",
    "kl_divergence",
    "b_re",
    "half_b_re_sqrt",
    "lambda_index",
    "lambda_value",
    "mc_samples",
    "delta",
    "delta_prime",
    "total_confidence",
    "train_size",
    "config_digest",
    "deviations",
]


def _report_csv_row(payload: dict) -> dict:
    row = {key: payload.get(key) for key in REPORT_CSV_FIELDS}
    row["arch"] = "-".join(str(width) for width in payload["arch"])
    row["deviations"] = "; ".join(payload.get("deviations", []))
    return row


def write_report_csv(path, reports: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_CSV_FIELDS)
        writer.writeheader()
        for payload in reports:
            writer.writerow(_report_csv_row(payload))


def write_csv(path, fieldnames: list[str], rows: list[dict]) -> None:
    """Plain CSV writer used for training histories and traces."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
