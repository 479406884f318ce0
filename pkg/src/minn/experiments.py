"""Experiment orchestration: configured runs, sweeps, baselines, and
multiply-accumulate accounting, with CSV/plot emission.

Every run is reproducible from (config, seed): datasets, channel pools,
model initialization, and training all draw from seed-derived streams,
so rerunning a config writes bit-identical CSV files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import figures
from .channel import ChannelPool, SystemGeometry, dbm_to_watt, sample_ricean_state, sample_saleh_valenzuela
from .config import ConfigError, ExperimentConfig, SWEEP_AXES, apply_axis, validate_config
from .data import Dataset, find_mnist, load_mnist, split_shuffle, synthetic_blobs
from .nn import Mlp, make_optimizer, softmax_cross_entropy
from .numerics import Rng
from .pipeline import ModelSpec, build_model, evaluate, predict_classes, train
from .power import MobileSvPool, build_policy, evaluate_mobile, phase_reparam, scheduled_train

PLAIN_COLUMNS = ("epoch", "step", "loss", "train_acc", "test_acc", "mean_power", "seed")
POWER_COLUMNS = PLAIN_COLUMNS + ("gamma", "mean_power_dbm", "constraint_satisfied")
SWEEP_COLUMNS = ("axis_value", "seed", "accuracy", "power")


@dataclass
class RunRecord:
    """Everything one experiment produced, reproducible from its config."""

    label: str
    config_hash: str
    history: list = field(default_factory=list)
    per_seed: list = field(default_factory=list)
    accuracy_mean: float = 0.0
    accuracy_std: float = 0.0
    mean_power: float = 0.0
    macs: dict = field(default_factory=dict)

    def digest(self) -> str:
        # The label names the invocation, not the result, so it stays out.
        payload = json.dumps(
            {
                "config_hash": self.config_hash,
                "history": self.history,
                "per_seed": self.per_seed,
                "accuracy_mean": self.accuracy_mean,
                "accuracy_std": self.accuracy_std,
                "mean_power": self.mean_power,
                "macs": self.macs,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def system_geometry(cfg: ExperimentConfig) -> SystemGeometry:
    bounds = None
    if cfg.power_control:
        # Scatterers must cover the receiver arena, not just the node bbox.
        x0, x1, y0, y1 = cfg.arena
        xs = [cfg.tx_position[0], cfg.rx_position[0], cfg.ms_position[0], x0, x1]
        ys = [cfg.tx_position[1], cfg.rx_position[1], cfg.ms_position[1], y0, y1]
        margin = 2.0
        bounds = ((min(xs) - margin, max(xs) + margin), (min(ys) - margin, max(ys) + margin))
    return SystemGeometry(
        n_tx=cfg.n_tx,
        n_rx=cfg.n_rx,
        n_ms=cfg.n_ms,
        tx_position=cfg.tx_position,
        rx_position=cfg.rx_position,
        ms_position=cfg.ms_position,
        scatterer_bounds=bounds,
    )


def make_dataset(cfg: ExperimentConfig, data_dir=None) -> tuple[Dataset, Dataset]:
    """Train/test pair; blobs are derived from the config's data seed so
    every seed of a run sees the same dataset."""
    if cfg.kind == "mnist":
        where = data_dir if data_dir is not None else "data"
        if find_mnist(where) is None:
            raise FileNotFoundError(
                f"MNIST IDX files not found under {where!r}; pass --data-dir or switch the config to blobs"
            )
        return load_mnist(where, cfg.train_limit, cfg.test_limit)
    rng = Rng(cfg.data_seed)
    full = synthetic_blobs(cfg.classes, cfg.dim, cfg.per_class, cfg.separation, rng.child("blobs"))
    return split_shuffle(full, cfg.train_fraction, rng.child("split"))


def make_channel_pool(cfg: ExperimentConfig, rng: Rng) -> ChannelPool:
    geom = system_geometry(cfg)
    if cfg.fading == "sv":
        sampler = lambda r: sample_saleh_valenzuela(geom, cfg.scatterers, r)
    else:
        sampler = lambda r: sample_ricean_state(geom, tuple(cfg.k_factors_db), r)
    if cfg.pool == "static":
        return ChannelPool("static", states=[sampler(rng)])
    return ChannelPool("dynamic", sampler=sampler, rng=rng)


def make_mobile_pool(cfg: ExperimentConfig, rng: Rng) -> MobileSvPool:
    x0, x1, y0, y1 = cfg.arena
    return MobileSvPool(system_geometry(cfg), cfg.scatterers, ((x0, x1), (y0, y1)), rng)


def make_spec(cfg: ExperimentConfig, input_dim: int, n_classes: int) -> ModelSpec:
    return ModelSpec(
        variant=cfg.variant,
        input_dim=input_dim,
        n_classes=n_classes,
        n_tx=cfg.n_tx,
        n_rx=cfg.n_rx,
        n_ms=cfg.n_ms,
        sim_layers=cfg.sim_layers if cfg.ms_type == "sim" else 1,
        noise_var=cfg.noise_var,
        encoder_hidden=tuple(cfg.encoder_hidden),
        decoder_hidden=tuple(cfg.decoder_hidden),
        controller_hidden=tuple(cfg.controller_hidden),
        csi_branch_hidden=cfg.csi_branch_hidden,
        csi_feature_width=cfg.csi_feature_width,
        ms_spacing=cfg.ms_spacing,
        ms_pitch=cfg.ms_pitch,
    )


def _data_dims(cfg: ExperimentConfig) -> tuple[int, int]:
    if cfg.kind == "mnist":
        return 28 * 28, 10
    return cfg.dim, cfg.classes


def _make_policy(cfg: ExperimentConfig, rng: Rng):
    return build_policy(
        rng,
        hidden=tuple(cfg.power_hidden),
        gamma=cfg.gamma,
        p_max_watt=dbm_to_watt(cfg.p_max_dbm),
        ceiling_watt=dbm_to_watt(cfg.ceiling_dbm),
        scaling=cfg.scaling,
        trainable=cfg.trainable,
    )


def mac_count(cfg: ExperimentConfig, input_dim: int | None = None, n_classes: int | None = None) -> dict:
    """Closed-form multiply-accumulate totals per module.

    Dense layers cost out*in real MACs (weights only).  The channel
    costs N_r*N_m + N_m*N_t complex MACs for the two surface-facing
    matrix products, plus (M-1)*N_m^2 for the inter-layer propagation
    and M*N_m for the per-layer diagonal phase scalings; one complex
    MAC is reported as 4 real MACs.  A surface-free run only applies
    the direct N_r*N_t product.
    """
    validate_config(cfg)
    d_in, d_cls = _data_dims(cfg)
    if input_dim is not None:
        d_in = input_dim
    if n_classes is not None:
        d_cls = n_classes
    model = build_model(make_spec(cfg, d_in, d_cls), Rng(0))

    def dense_macs(module) -> int:
        if module is None:
            return 0
        return int(sum(q.value.size for q in module.parameters() if q.name.endswith(".weight")))

    encoder = dense_macs(model.encoder)
    decoder = dense_macs(model.decoder)
    controller = dense_macs(model.controller)
    power_net = 0
    if cfg.power_control:
        power_net = dense_macs(_make_policy(cfg, Rng(0)).net)
    if cfg.ms_mode == "none":
        channel_complex = cfg.n_rx * cfg.n_tx
    else:
        m = cfg.sim_layers if cfg.ms_type == "sim" else 1
        channel_complex = (
            cfg.n_rx * cfg.n_ms + cfg.n_ms * cfg.n_tx + (m - 1) * cfg.n_ms**2 + m * cfg.n_ms
        )
    channel = 4 * channel_complex
    total = encoder + decoder + controller + power_net + channel
    return {
        "encoder": encoder,
        "decoder": decoder,
        "controller": controller,
        "power_net": power_net,
        "channel_complex": channel_complex,
        "channel": channel,
        "total": total,
    }


def _run_one_seed_plain(cfg: ExperimentConfig, seed: int, train_set: Dataset, test_set: Dataset):
    rng = Rng(seed)
    spec = make_spec(cfg, train_set.dim, train_set.n_classes)
    model = build_model(spec, rng.child("model"))
    pool = make_channel_pool(cfg, rng.child("pool"))
    optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate, cfg.beta1, cfg.beta2)
    history: list[dict] = []
    if cfg.epochs > 0:
        result = train(
            model,
            train_set,
            test_set,
            pool,
            optimizer,
            cfg.epochs,
            cfg.power_watt,
            rng.child("train"),
            batch_size=cfg.batch_size,
            seed_label=seed,
        )
        history = result.history
    acc, _ = evaluate(model, test_set, pool, cfg.power_watt, rng.child("final"), repeats=cfg.eval_repeats)
    power = history[-1]["mean_power"] if history else cfg.power_watt
    return history, {"seed": seed, "accuracy": acc, "power": power}


def _run_one_seed_power(cfg: ExperimentConfig, seed: int, train_set: Dataset, test_set: Dataset):
    rng = Rng(seed)
    spec = make_spec(cfg, train_set.dim, train_set.n_classes)
    model = build_model(spec, rng.child("model"))
    pool = make_mobile_pool(cfg, rng.child("pool"))
    policy = _make_policy(cfg, rng.child("policy"))
    optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate, cfg.beta1, cfg.beta2)
    history: list[dict] = []
    if cfg.epochs > 0:
        result = scheduled_train(
            model,
            policy,
            train_set,
            test_set,
            pool,
            optimizer,
            cfg.epochs,
            rng.child("train"),
            warmup=cfg.warmup,
            batch_size=cfg.batch_size,
            phase_mode=cfg.phase_mode,
            warmup_power=cfg.power_watt,
            seed_label=seed,
        )
        history = result.history
    fixed = cfg.power_watt if cfg.epochs <= cfg.warmup else None
    acc, power = evaluate_mobile(
        model, policy, phase_reparam(model), test_set, pool, rng.child("final"), fixed_power=fixed
    )
    return history, {"seed": seed, "accuracy": acc, "power": power}


def run(cfg: ExperimentConfig, out_dir=None, data_dir=None, label: str = "train") -> RunRecord:
    """Train and evaluate per seed, aggregate, and write the results.

    All config validation happens before any computation; epochs=0 skips
    training and records the untrained accuracy.
    """
    validate_config(cfg)
    train_set, test_set = make_dataset(cfg, data_dir)
    record = RunRecord(label=label, config_hash=cfg.config_hash())
    runner = _run_one_seed_power if cfg.power_control else _run_one_seed_plain
    for seed in cfg.seeds:
        history, summary = runner(cfg, seed, train_set, test_set)
        record.history.extend(history)
        record.per_seed.append(summary)
    accs = [s["accuracy"] for s in record.per_seed]
    record.accuracy_mean = float(np.mean(accs))
    record.accuracy_std = float(np.std(accs))
    record.mean_power = float(np.mean([s["power"] for s in record.per_seed]))
    record.macs = mac_count(cfg, train_set.dim, train_set.n_classes)
    if out_dir is not None:
        _emit_run_outputs(record, cfg, out_dir)
    return record


def sweep(
    cfg: ExperimentConfig, axis: str, values, out_dir=None, data_dir=None
) -> tuple[list[RunRecord], list[dict]]:
    """One run per axis value with shared seeds; returns the records and
    the tidy per-(value, seed) rows that go into sweep.csv."""
    values = list(values)
    if not values:
        raise ConfigError("sweep values must be nonempty")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r} (valid: {', '.join(SWEEP_AXES)})")
    configs = [apply_axis(cfg, axis, v) for v in values]
    records = []
    rows = []
    for value, point_cfg in zip(values, configs):
        record = run(point_cfg, data_dir=data_dir, label=f"sweep-{axis}-{value}")
        records.append(record)
        for s in record.per_seed:
            rows.append(
                {"axis_value": value, "seed": s["seed"], "accuracy": s["accuracy"], "power": s["power"]}
            )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(rows, out / "sweep.csv")
        figures.plot_sweep(rows, axis, out / "sweep.png")
        if axis == "gamma":
            figures.plot_power_tradeoff(rows, out / "power_tradeoff.png")
    return records, rows


def baseline_no_ms(cfg: ExperimentConfig, out_dir=None, data_dir=None) -> RunRecord:
    """Same run with the surface removed: y = H_D s + noise."""
    return run(replace(cfg, ms_mode="none"), out_dir=out_dir, data_dir=data_dir, label="baseline-no-ms")


def _digital_accuracy(net: Mlp, ds: Dataset) -> float:
    hits = 0
    for start in range(0, len(ds), 512):
        logits = net.forward(ds.features[start : start + 512])
        hits += int(np.sum(predict_classes(logits) == ds.labels[start : start + 512]))
    return hits / len(ds)


def baseline_digital(cfg: ExperimentConfig, out_dir=None, data_dir=None) -> RunRecord:
    """Channel-free reference: the encoder and decoder stacks chained
    into one dense classifier with the same total layer budget."""
    validate_config(cfg)
    train_set, test_set = make_dataset(cfg, data_dir)
    widths = (
        [train_set.dim]
        + list(cfg.encoder_hidden)
        + [2 * cfg.n_tx]
        + list(cfg.decoder_hidden)
        + [train_set.n_classes]
    )
    record = RunRecord(label="baseline-digital", config_hash=cfg.config_hash())
    for seed in cfg.seeds:
        rng = Rng(seed)
        net = Mlp(widths, rng.child("model"), name="digital")
        optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate, cfg.beta1, cfg.beta2)
        shuffle_rng = rng.child("train").child("shuffle")
        onehot = train_set.one_hot_labels()
        global_step = 0
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(len(train_set))
            losses = []
            hits = 0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                for q in net.parameters():
                    q.zero_grad()
                logits = net.forward(train_set.features[idx])
                loss, g_logits = softmax_cross_entropy(logits, onehot[idx])
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"loss became non-finite at epoch {epoch}, step {global_step} (batch starting at {start})"
                    )
                net.backward(g_logits)
                optimizer.step(net.parameters())
                global_step += 1
                losses.append(loss)
                hits += int(np.sum(predict_classes(logits) == train_set.labels[idx]))
            record.history.append(
                {
                    "epoch": epoch,
                    "step": global_step,
                    "loss": float(np.mean(losses)),
                    "train_acc": hits / len(order),
                    "test_acc": _digital_accuracy(net, test_set),
                    "mean_power": 0.0,
                    "seed": seed,
                }
            )
        record.per_seed.append({"seed": seed, "accuracy": _digital_accuracy(net, test_set), "power": 0.0})
    accs = [s["accuracy"] for s in record.per_seed]
    record.accuracy_mean = float(np.mean(accs))
    record.accuracy_std = float(np.std(accs))
    record.mean_power = 0.0
    dense = sum(a * b for a, b in zip(widths[1:], widths[:-1]))
    record.macs = {
        "encoder": 0,
        "decoder": 0,
        "controller": 0,
        "power_net": 0,
        "channel_complex": 0,
        "channel": 0,
        "digital": dense,
        "total": dense,
    }
    if out_dir is not None:
        _emit_run_outputs(record, cfg, out_dir)
    return record


def write_metrics_csv(rows: list[dict], path) -> None:
    columns = POWER_COLUMNS if rows and "gamma" in rows[0] else PLAIN_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        writer.writerows(rows)


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(SWEEP_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)


def _emit_run_outputs(record: RunRecord, cfg: ExperimentConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(record.history, out / "metrics.csv")
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "label": record.label,
                "config_hash": record.config_hash,
                "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(cfg).items()},
                "accuracy_mean": record.accuracy_mean,
                "accuracy_std": record.accuracy_std,
                "mean_power": record.mean_power,
                "per_seed": record.per_seed,
                "macs": record.macs,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    if record.history:
        figures.plot_history(record.history, out / "metrics.png")
