"""Command-line entry point.

Subcommands cover data generation, fitting the two model factors,
evaluation, prediction, timing benchmarks, and the dev-selected grid search.
Configuration precedence is flags > config file > environment seed >
defaults; the effective configuration is echoed into every output record.
Outputs are written atomically (temp file + rename) and timing measurements
live in separate sidecar documents so primary outputs stay reproducible
bit for bit.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .attention import (
    EncoderConfig,
    TrainOptions,
    load_encoder,
    save_encoder,
    sequence_mark_log_likelihood,
    train_marks,
)
from .events import load_split, write_split
from .metrics import avg_otd, bootstrap_ci, loglik_decomposed, next_event_scores, rmse_star
from .mixture import MixtureParams, fit_em, training_pairs
from .predict import benchmark_inference, predict_next_events, rollout_batch
from .simulate import DecomposedIntensityModel, make_synthetic


@dataclass
class RunConfig:
    """Every tunable of every subcommand, with defaults."""

    command: str = ""
    # data
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    K: int | None = None
    jitter: bool = False
    # sampling
    kind: str = "hawkes1"
    n_train: int = 1024
    n_dev: int = 256
    n_test: int = 512
    length: int = 64
    rate: float = 1.0
    # mixture
    M: int = 16
    max_iter: int = 200
    tol: float = 1e-7
    # encoder
    L: int = 2
    d_model: int = 16
    d_qk: int | None = None
    n_heads: int = 1
    # training
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    patience: int = 10
    seed: int = 0
    # inference / evaluation
    mode: str = "next"
    P: int = 20
    n_samples: int = 1
    n_resamples: int = 1000
    repeats: int = 5
    c_del_grid: tuple = (0.5, 1.0, 2.0, 4.0)
    grid_D: tuple = (4, 8, 16, 32, 64, 128)
    grid_L: tuple = (1, 2, 3, 4, 5)
    threads: int = 0  # 0 = all available cores
    # artifact paths
    mix: str | None = None
    enc: str | None = None
    out: str | None = None

    def echo(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def effective_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    @property
    def effective_d_qk(self) -> int:
        return self.d_qk if self.d_qk is not None else self.d_model


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_mixture(path: str, params: MixtureParams, config: RunConfig) -> None:
    doc = {"config": config.echo(), "model": json.loads(params.to_json())}
    _atomic_write(path, json.dumps(doc) + "\n")


def load_mixture(path: str) -> MixtureParams:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return MixtureParams.from_json(json.dumps(doc["model"]))


def _jitter_seed(cfg: RunConfig) -> int | None:
    return cfg.seed if cfg.jitter else None


def _load_named_split(cfg: RunConfig, name: str):
    path = getattr(cfg, name)
    if path is None:
        raise ValueError(f"--{name} is required for this command")
    if cfg.K is None:
        raise ValueError("--K is required to load data")
    return load_split(path, cfg.K, jitter_seed=_jitter_seed(cfg))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_sample(cfg: RunConfig) -> int:
    if cfg.out is None:
        raise ValueError("--out directory is required")
    counts = {"train": cfg.n_train, "dev": cfg.n_dev, "test": cfg.n_test}
    dataset = make_synthetic(
        cfg.kind, counts, seed=cfg.seed, length=cfg.length,
        K=cfg.K or 3, rate=cfg.rate,
    )
    os.makedirs(cfg.out, exist_ok=True)
    for name in counts:
        write_split(os.path.join(cfg.out, f"{name}.jsonl"), dataset.splits[name])
    manifest = {
        "config": cfg.echo(),
        "K": dataset.K,
        "tokens": {name: dataset.n_tokens(name) for name in counts},
    }
    _atomic_write(os.path.join(cfg.out, "manifest.json"), json.dumps(manifest) + "\n")
    print(f"wrote {sum(counts.values())} sequences (K={dataset.K}) to {cfg.out}")
    return 0


def cmd_fit_times(cfg: RunConfig) -> int:
    if cfg.out is None:
        raise ValueError("--out is required")
    train = _load_named_split(cfg, "train")
    params = fit_em(
        training_pairs(train),
        n_components=cfg.M,
        K=cfg.K,
        seed=cfg.seed,
        max_iter=cfg.max_iter,
        tol=cfg.tol,
    )
    save_mixture(cfg.out, params, cfg)
    print(f"fitted gap mixture (K={cfg.K}, M={cfg.M}) -> {cfg.out}")
    return 0


def _encoder_config(cfg: RunConfig) -> EncoderConfig:
    return EncoderConfig(
        K=cfg.K,
        n_layers=cfg.L,
        d_model=cfg.d_model,
        d_qk=cfg.effective_d_qk,
        n_heads=cfg.n_heads,
        seed=cfg.seed,
    )


def _train_options(cfg: RunConfig) -> TrainOptions:
    return TrainOptions(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        patience=cfg.patience,
    )


def cmd_fit_marks(cfg: RunConfig) -> int:
    if cfg.out is None:
        raise ValueError("--out is required")
    train = _load_named_split(cfg, "train")
    dev = _load_named_split(cfg, "dev")
    config = _encoder_config(cfg)
    result = train_marks(config, train, dev, _train_options(cfg))
    buf_path = cfg.out
    buf = io.BytesIO()
    save_encoder(buf, result.params, config)
    _atomic_write_bytes(buf_path, buf.getvalue())
    report = {
        "config": cfg.echo(),
        "dev_curve": result.dev_curve,
        "best_epoch": result.best_epoch,
        "diverged": result.diverged,
    }
    _atomic_write(buf_path + ".report.json", json.dumps(report) + "\n")
    if result.dev_curve:
        print(
            f"trained mark classifier; best dev mark log-lik "
            f"{max(result.dev_curve):.4f} -> {buf_path}"
        )
    else:
        print(f"saved untrained initialization (0 epochs) -> {buf_path}")
    return 0


def _load_models(cfg: RunConfig):
    if cfg.mix is None or cfg.enc is None:
        raise ValueError("--mix and --enc are required")
    mixture = load_mixture(cfg.mix)
    enc_params, enc_config = load_encoder(cfg.enc)
    if mixture.K != enc_config.K:
        raise ValueError("mixture and encoder checkpoints disagree on K")
    return mixture, enc_params, enc_config


def cmd_eval(cfg: RunConfig) -> int:
    mixture, enc_params, enc_config = _load_models(cfg)
    cfg_k = cfg.K if cfg.K is not None else enc_config.K
    if cfg.test is None:
        raise ValueError("--test is required")
    test = load_split(cfg.test, cfg_k, jitter_seed=_jitter_seed(cfg))

    def evaluate_one(seq):
        ll = loglik_decomposed(mixture, enc_params, enc_config, seq)
        if len(seq) < 2:
            return ll, None
        t_hats, k_hats = predict_next_events(mixture, enc_params, enc_config, seq)
        # next-event protocol scores positions 2..N
        return ll, (t_hats[1:], k_hats[1:], seq.times[1:], seq.marks[1:])

    with ThreadPoolExecutor(max_workers=cfg.effective_threads) as pool:
        evaluated = list(pool.map(evaluate_one, test))

    per_seq_ll = [ll for ll, _ in evaluated]
    aligned = [parts for _, parts in evaluated if parts is not None]
    per_seq_rmse = [next_event_scores(*parts)[0] for parts in aligned]
    per_seq_err = [next_event_scores(*parts)[1] for parts in aligned]
    n_tokens = sum(len(s) for s in test)
    reports = [
        bootstrap_ci(
            per_seq_ll, n_resamples=cfg.n_resamples, seed=cfg.seed, name="loglik"
        ),
    ]
    if per_seq_rmse:
        reports.append(
            bootstrap_ci(
                per_seq_rmse, n_resamples=cfg.n_resamples, seed=cfg.seed, name="rmse"
            )
        )
        reports.append(
            bootstrap_ci(
                per_seq_err,
                n_resamples=cfg.n_resamples,
                seed=cfg.seed,
                name="error_rate",
            )
        )
    if aligned:
        pooled_rmse, pooled_err = next_event_scores(
            np.concatenate([p[0] for p in aligned]),
            np.concatenate([p[1] for p in aligned]),
            np.concatenate([p[2] for p in aligned]),
            np.concatenate([p[3] for p in aligned]),
        )
    else:
        pooled_rmse = pooled_err = float("nan")
    pooled = {
        "loglik_per_token": float(np.sum(per_seq_ll) / max(n_tokens, 1)),
        "rmse": pooled_rmse,
        "error_rate": pooled_err,
    }

    if cfg.P > 0 and any(len(s) > cfg.P + 1 for s in test):
        horizon_seqs = [s for s in test if len(s) > cfg.P + 1]
        histories = [
            (s.times[: len(s) - cfg.P], s.marks[: len(s) - cfg.P])
            for s in horizon_seqs
        ]
        horizons = rollout_batch(
            mixture, enc_params, enc_config, histories, cfg.P,
            n_threads=cfg.effective_threads,
        )
        truths = [
            (s.times[len(s) - cfg.P :], s.marks[len(s) - cfg.P :])
            for s in horizon_seqs
        ]
        gaps = np.concatenate(
            [np.diff(np.concatenate([[0.0], s.times])) for s in horizon_seqs]
        )
        scale = float(gaps.mean())
        otds = [
            avg_otd(h, t, scale=scale, grid=cfg.c_del_grid)
            for h, t in zip(horizons, truths)
        ]
        reports.append(
            bootstrap_ci(
                otds, n_resamples=cfg.n_resamples, seed=cfg.seed, name="avg_otd"
            )
        )
        pooled["rmse_star"] = rmse_star(horizons, truths, K=enc_config.K)
        pooled["otd_scale"] = scale

    lines = []
    for rep in reports:
        record = rep.to_dict()
        record["config"] = cfg.echo()
        lines.append(json.dumps(record))
    pooled_record = {"name": "pooled", **pooled, "config": cfg.echo()}
    lines.append(json.dumps(pooled_record))
    if cfg.out:
        _atomic_write(cfg.out, "\n".join(lines) + "\n")

    print(f"{'metric':<12} {'point':>12} {'ci_low':>12} {'ci_high':>12}")
    for rep in reports:
        print(
            f"{rep.name:<12} {rep.point:>12.4f} {rep.ci_low:>12.4f} "
            f"{rep.ci_high:>12.4f}"
        )
    for key, val in pooled.items():
        print(f"{key:<24} {val:.6g}")
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    mixture, enc_params, enc_config = _load_models(cfg)
    cfg_k = cfg.K if cfg.K is not None else enc_config.K
    if cfg.test is None:
        raise ValueError("--test is required")
    test = load_split(cfg.test, cfg_k, jitter_seed=_jitter_seed(cfg))
    start = time.perf_counter()
    records = []
    if cfg.mode == "next":
        for seq in test:
            t_hats, k_hats = predict_next_events(mixture, enc_params, enc_config, seq)
            events = [[float(t), int(k) + 1] for t, k in zip(t_hats, k_hats)]
            T = float(max(t_hats.max(), seq.window_end)) if len(seq) else seq.window_end
            records.append({"T": T, "events": events})
    elif cfg.mode == "horizon":
        horizons = rollout_batch(
            mixture,
            enc_params,
            enc_config,
            [(s.times, s.marks) for s in test],
            cfg.P,
            n_threads=cfg.effective_threads,
        )
        for h in horizons:
            events = [[float(t), int(k) + 1] for t, k in zip(h.times, h.marks)]
            records.append({"T": float(h.times[-1] + 1e-8), "events": events})
    else:
        raise ValueError("--mode must be 'next' or 'horizon'")
    elapsed = time.perf_counter() - start
    if cfg.out:
        _atomic_write(cfg.out, "".join(json.dumps(r) + "\n" for r in records))
        timing = {"config": cfg.echo(), "seconds": elapsed, "n_sequences": len(test)}
        _atomic_write(cfg.out + ".timing.json", json.dumps(timing) + "\n")
    print(f"predicted {len(records)} sequences in {elapsed:.3f}s ({cfg.mode} mode)")
    return 0


def cmd_benchmark(cfg: RunConfig) -> int:
    mixture, enc_params, enc_config = _load_models(cfg)
    cfg_k = cfg.K if cfg.K is not None else enc_config.K
    if cfg.test is None:
        raise ValueError("--test is required")
    test = load_split(cfg.test, cfg_k, jitter_seed=_jitter_seed(cfg))
    model = DecomposedIntensityModel(mixture, enc_params, enc_config)
    report = benchmark_inference(
        test,
        mixture,
        enc_params,
        enc_config,
        P=cfg.P,
        model=model,
        n_samples=cfg.n_samples,
        repeats=cfg.repeats,
        n_threads=cfg.effective_threads,
        seed=cfg.seed,
    )
    report["config"] = cfg.echo()
    if cfg.out:
        _atomic_write(cfg.out, json.dumps(report) + "\n")
    print(
        "rollout {:.3f}s vs thinning {:.3f}s -> speedup {:.1f}x".format(
            report["rollout_seconds"]["mean"],
            report["thinning_seconds"]["mean"],
            report["speedup"],
        )
    )
    return 0


def cmd_grid_search(cfg: RunConfig) -> int:
    train = _load_named_split(cfg, "train")
    dev = _load_named_split(cfg, "dev")
    rows = []
    best = None
    for d_model in cfg.grid_D:
        for n_layers in cfg.grid_L:
            sub = dataclasses.replace(cfg, d_model=d_model, L=n_layers, d_qk=None)
            config = _encoder_config(sub)
            result = train_marks(config, train, dev, _train_options(cfg))
            dev_ll = float(
                sum(
                    sequence_mark_log_likelihood(result.params, config, s)
                    for s in dev
                )
            )
            rows.append({"d_model": d_model, "n_layers": n_layers, "dev_loglik": dev_ll})
            print(f"D={d_model:<4} L={n_layers}: dev mark log-lik {dev_ll:.4f}")
            if best is None or dev_ll > best[0]:
                best = (dev_ll, config, result.params)
    assert best is not None
    _, config, params = best
    if cfg.out:
        buf = io.BytesIO()
        save_encoder(buf, params, config)
        _atomic_write_bytes(cfg.out, buf.getvalue())
        doc = {
            "config": cfg.echo(),
            "rows": rows,
            "selected": {"d_model": config.d_model, "n_layers": config.n_layers},
        }
        _atomic_write(cfg.out + ".report.json", json.dumps(doc) + "\n")
    print(f"selected D={config.d_model} L={config.n_layers}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

_COMMANDS = {
    "sample": cmd_sample,
    "fit-times": cmd_fit_times,
    "fit-marks": cmd_fit_marks,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
    "grid-search": cmd_grid_search,
}

_FLAG_SPECS: dict[str, dict] = {
    "train": dict(type=str), "dev": dict(type=str), "test": dict(type=str),
    "K": dict(type=int), "jitter": dict(action="store_true"),
    "kind": dict(type=str, choices=["hawkes1", "hawkes2", "poisson", "cyclic_marks"]),
    "n_train": dict(type=int), "n_dev": dict(type=int), "n_test": dict(type=int),
    "length": dict(type=int), "rate": dict(type=float),
    "M": dict(type=int), "max_iter": dict(type=int), "tol": dict(type=float),
    "L": dict(type=int), "d_model": dict(type=int), "d_qk": dict(type=int),
    "n_heads": dict(type=int),
    "epochs": dict(type=int), "batch_size": dict(type=int), "lr": dict(type=float),
    "patience": dict(type=int), "seed": dict(type=int),
    "mode": dict(type=str, choices=["next", "horizon"]),
    "P": dict(type=int), "n_samples": dict(type=int),
    "n_resamples": dict(type=int), "repeats": dict(type=int),
    "c_del_grid": dict(type=lambda s: tuple(float(x) for x in s.split(","))),
    "grid_D": dict(type=lambda s: tuple(int(x) for x in s.split(","))),
    "grid_L": dict(type=lambda s: tuple(int(x) for x in s.split(","))),
    "threads": dict(type=int),
    "mix": dict(type=str), "enc": dict(type=str), "out": dict(type=str),
}

_COMMAND_FLAGS = {
    "sample": ["kind", "n_train", "n_dev", "n_test", "length", "K", "rate", "seed", "out"],
    "fit-times": ["train", "K", "M", "seed", "max_iter", "tol", "jitter", "out"],
    "fit-marks": [
        "train", "dev", "K", "L", "d_model", "d_qk", "n_heads", "seed",
        "epochs", "batch_size", "lr", "patience", "jitter", "out",
    ],
    "eval": [
        "test", "K", "mix", "enc", "P", "c_del_grid", "n_resamples", "seed",
        "jitter", "threads", "out",
    ],
    "predict": ["test", "K", "mix", "enc", "mode", "P", "jitter", "threads", "out"],
    "benchmark": [
        "test", "K", "mix", "enc", "P", "n_samples", "repeats", "seed",
        "jitter", "threads", "out",
    ],
    "grid-search": [
        "train", "dev", "K", "grid_D", "grid_L", "seed", "epochs", "batch_size",
        "lr", "patience", "n_heads", "jitter", "out",
    ],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtpp",
        description="Marked temporal point processes: log-normal gap mixture "
        "plus a continuous-time attention mark classifier.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in _COMMAND_FLAGS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="JSON file with defaults for any flag")
        for flag in flags:
            spec = dict(_FLAG_SPECS[flag], default=None)
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, **spec)
    return parser


def effective_config(args: argparse.Namespace) -> RunConfig:
    """Merge precedence: flags > config file > MTPP_SEED > defaults."""
    cfg = RunConfig(command=args.command)
    env_seed = os.environ.get("MTPP_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        for key, value in file_cfg.items():
            if not hasattr(cfg, key):
                raise ValueError(f"unknown config key {key!r}")
            if key in ("c_del_grid", "grid_D", "grid_L"):
                value = tuple(value)
            setattr(cfg, key, value)
    for key in _FLAG_SPECS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            setattr(cfg, key, value)
    return cfg


def run(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = effective_config(args)
    try:
        return _COMMANDS[args.command](cfg)
    except (ValueError, OSError, FloatingPointError, OverflowError) as exc:
        print(f"mtpp {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
