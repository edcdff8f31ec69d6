"""Continuous-time attention classifier over marks.

For a query pair ``(t, k)`` the encoder produces an embedding stack
``h_k(t)``: the mark's base embedding followed by layerwise residual updates,
where each update attends over the strictly-earlier events of the history
with positive exponential attention weights normalized by ``1 + sum``.  The
conditional mark distribution is a softmax over ``w_k . h_k(t)``.

Two forward implementations exist on purpose:

* a differentiable one built on :mod:`mtpp.autodiff`, used for training the
  mark objective (sum of log-probabilities of observed marks);
* an incremental, cache-backed one (:class:`EncoderState`) used everywhere
  else.  Contractions over the history axis use non-optimized ``einsum`` so
  that padded slots (exact zeros after masking) can never change the bits of
  valid entries; this is what makes batched rollout deterministic across
  batch compositions and thread counts.

A unit test pins the two implementations against each other.
"""

from __future__ import annotations

import copy
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .events import EventSequence, history_arrays

logger = logging.getLogger(__name__)

# Attention score clamp before exponentiation; exp(60) is ~1e26, far from
# overflow but large enough that the clamp only fires on degenerate models.
SCORE_CLIP = 60.0


def temporal_embedding(t, d_z: int) -> np.ndarray:
    """Sinusoidal embedding of (continuous) time; shape ``t.shape + (d_z,)``.

    Even dimensions carry ``sin(t / 10^(4d/d_z))``; each following odd
    dimension carries the cosine at the same frequency.
    """
    if d_z % 2:
        raise ValueError("d_z must be even")
    t = np.asarray(t, dtype=np.float64)
    d = np.arange(d_z)
    denom = 10.0 ** (4.0 * (d - (d % 2)) / d_z)
    phase = t[..., None] / denom
    out = np.where(d % 2 == 0, np.sin(phase), np.cos(phase))
    return out


def attention_weight(key_vec, query_vec, d_scale: float) -> float:
    """Unnormalized attention weight exp(<key, query> / sqrt(d_scale)) > 0."""
    score = float(np.dot(key_vec, query_vec)) / np.sqrt(d_scale)
    if abs(score) > SCORE_CLIP:
        logger.warning("attention score %.3g clamped to +/-%g", score, SCORE_CLIP)
        score = float(np.clip(score, -SCORE_CLIP, SCORE_CLIP))
    return float(np.exp(score))


@dataclass(frozen=True)
class EncoderConfig:
    K: int
    n_layers: int = 2
    d_model: int = 16
    d_qk: int = 16
    n_heads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.n_layers < 1 or self.d_model < 1 or self.d_qk < 1 or self.n_heads < 1:
            raise ValueError("n_layers, d_model, d_qk, n_heads must be >= 1")
        if self.d_qk % self.n_heads or self.d_model % self.n_heads:
            raise ValueError("n_heads must divide both d_qk and d_model")
        if self.d_embed % 2:
            raise ValueError(
                "(n_layers + 1) * d_model must be even (temporal embedding width)"
            )

    @property
    def d_embed(self) -> int:
        """Width of the concatenated embedding stack; also the attention
        scale and the temporal-embedding width."""
        return (self.n_layers + 1) * self.d_model

    @property
    def d_in(self) -> int:
        return self.d_embed + self.d_model


@dataclass
class EncoderParams:
    """All learnable tensors: base embeddings, per-layer projections, and
    classifier weights."""

    base: np.ndarray  # (K, d_model)
    queries: list[np.ndarray]  # L x (d_qk, d_in)
    keys: list[np.ndarray]  # L x (d_qk, d_in)
    values: list[np.ndarray]  # L x (d_model, d_in)
    classifier: np.ndarray  # (K, d_embed)

    def tensors(self) -> list[np.ndarray]:
        out = [self.base]
        for q, k, v in zip(self.queries, self.keys, self.values):
            out += [q, k, v]
        out.append(self.classifier)
        return out

    def copy(self) -> "EncoderParams":
        return copy.deepcopy(self)

    def validate(self, config: EncoderConfig) -> None:
        shapes = {
            "base": (self.base, (config.K, config.d_model)),
            "classifier": (self.classifier, (config.K, config.d_embed)),
        }
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
        for ell in range(config.n_layers):
            for name, arr, rows in [
                ("queries", self.queries[ell], config.d_qk),
                ("keys", self.keys[ell], config.d_qk),
                ("values", self.values[ell], config.d_model),
            ]:
                if arr.shape != (rows, config.d_in):
                    raise ValueError(f"{name}[{ell}]: bad shape {arr.shape}")
        if not all(np.all(np.isfinite(a)) for a in self.tensors()):
            raise ValueError("non-finite encoder parameter")


def init_encoder_params(config: EncoderConfig) -> EncoderParams:
    """Uniform(+/- 1/sqrt(fan_in)) projections; base embeddings 0.01*N(0,1)."""
    rng = np.random.default_rng([config.seed, 0])
    bound = 1.0 / np.sqrt(config.d_in)
    queries, keys, values = [], [], []
    for _ in range(config.n_layers):
        queries.append(rng.uniform(-bound, bound, size=(config.d_qk, config.d_in)))
        keys.append(rng.uniform(-bound, bound, size=(config.d_qk, config.d_in)))
        values.append(rng.uniform(-bound, bound, size=(config.d_model, config.d_in)))
    cbound = 1.0 / np.sqrt(config.d_embed)
    return EncoderParams(
        base=0.01 * rng.standard_normal((config.K, config.d_model)),
        queries=queries,
        keys=keys,
        values=values,
        classifier=rng.uniform(-cbound, cbound, size=(config.K, config.d_embed)),
    )


@dataclass(frozen=True)
class EmbeddingStack:
    """Per-layer embeddings for one query pair and their concatenation."""

    layers: tuple[np.ndarray, ...]

    @property
    def concatenated(self) -> np.ndarray:
        return np.concatenate(self.layers)


# ---------------------------------------------------------------------------
# Checkpoint format: npz with a JSON config header and flat tensors.
# ---------------------------------------------------------------------------


def save_encoder(path, params: EncoderParams, config: EncoderConfig) -> None:
    arrays = {"base": params.base, "classifier": params.classifier}
    for ell in range(config.n_layers):
        arrays[f"q_{ell}"] = params.queries[ell]
        arrays[f"k_{ell}"] = params.keys[ell]
        arrays[f"v_{ell}"] = params.values[ell]
    header = json.dumps(
        {
            "K": config.K,
            "n_layers": config.n_layers,
            "d_model": config.d_model,
            "d_qk": config.d_qk,
            "n_heads": config.n_heads,
            "seed": config.seed,
        }
    )
    buf = io.BytesIO()
    np.savez(buf, config=np.frombuffer(header.encode(), dtype=np.uint8), **arrays)
    if hasattr(path, "write"):
        path.write(buf.getvalue())
    else:
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())


def load_encoder(path) -> tuple[EncoderParams, EncoderConfig]:
    with np.load(path) as npz:
        header = json.loads(bytes(npz["config"]).decode())
        config = EncoderConfig(**header)
        params = EncoderParams(
            base=npz["base"],
            queries=[npz[f"q_{ell}"] for ell in range(config.n_layers)],
            keys=[npz[f"k_{ell}"] for ell in range(config.n_layers)],
            values=[npz[f"v_{ell}"] for ell in range(config.n_layers)],
            classifier=npz["classifier"],
        )
    params.validate(config)
    return params, config


# ---------------------------------------------------------------------------
# Differentiable forward (training path)
# ---------------------------------------------------------------------------


def _heads(t: ad.Tensor, n_heads: int) -> ad.Tensor:
    return t.reshape(t.shape[:-1] + (n_heads, t.shape[-1] // n_heads))


def _sequence_loss(params_t: dict, config: EncoderConfig, seq: EventSequence):
    """Graph for the summed log-probability of one sequence's marks."""
    n = len(seq)
    K, H = config.K, config.n_heads
    z = temporal_embedding(seq.times, config.d_embed)
    z_const = ad.Tensor(z)
    zq_const = ad.Tensor(np.broadcast_to(z[:, None, :], (n, K, config.d_embed)))
    # query i may only attend to strictly earlier events
    mask = ad.Tensor(np.tril(np.ones((n, n)), k=-1)[:, None, None, :])
    inv_scale = 1.0 / np.sqrt(config.d_embed)

    marks = np.asarray(seq.marks)
    E = ad.gather_rows(params_t["base"], marks)
    Qemb = ad.broadcast_to(params_t["base"], (n, K, config.d_model))
    stacks = [Qemb]
    for ell in range(config.n_layers):
        Xh = ad.concat([z_const, E], axis=-1)
        keys = _heads(ad.einsum("nf,df->nd", Xh, params_t["keys"][ell]), H)
        vals = _heads(ad.einsum("nf,df->nd", Xh, params_t["values"][ell]), H)
        Xq = ad.concat([zq_const, Qemb], axis=-1)
        q = _heads(ad.einsum("qkf,df->qkd", Xq, params_t["queries"][ell]), H)
        scores = ad.einsum("qkhd,nhd->qkhn", q, keys) * inv_scale
        if np.any(np.abs(scores.data) > SCORE_CLIP):
            logger.warning("attention scores clamped during training forward")
        alpha = scores.clip(-SCORE_CLIP, SCORE_CLIP).exp() * mask
        norm = alpha.sum(axis=-1) + 1.0
        numer = ad.einsum("qkhn,nhv->qkhv", alpha, vals)
        upd = (numer / norm.reshape(n, K, H, 1)).reshape(n, K, config.d_model).tanh()
        Qemb = Qemb + upd
        E = ad.index_select1(Qemb, marks)
        stacks.append(Qemb)
    h = ad.concat(stacks, axis=-1)
    logits = ad.einsum("qkd,kd->qk", h, params_t["classifier"])
    logp = ad.log_softmax(logits, axis=1)
    return ad.index_select1(logp, marks).sum()


def _params_tensors(params: EncoderParams) -> dict:
    return {
        "base": ad.Tensor(params.base, requires_grad=True),
        "queries": [ad.Tensor(a, requires_grad=True) for a in params.queries],
        "keys": [ad.Tensor(a, requires_grad=True) for a in params.keys],
        "values": [ad.Tensor(a, requires_grad=True) for a in params.values],
        "classifier": ad.Tensor(params.classifier, requires_grad=True),
    }


def mark_log_likelihood_and_grad(
    params: EncoderParams, config: EncoderConfig, batch: Iterable[EventSequence]
) -> tuple[float, EncoderParams]:
    """Summed log-probability of observed marks and its exact gradient."""
    params_t = _params_tensors(params)
    total = ad.Tensor(0.0)
    for idx, seq in enumerate(batch):
        if len(seq) == 0:
            continue
        loss = _sequence_loss(params_t, config, seq)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite mark objective at sequence {idx}")
        total = total + loss
    if total.requires_grad:
        total.backward()

    def g(t: ad.Tensor) -> np.ndarray:
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    grads = EncoderParams(
        base=g(params_t["base"]),
        queries=[g(t) for t in params_t["queries"]],
        keys=[g(t) for t in params_t["keys"]],
        values=[g(t) for t in params_t["values"]],
        classifier=g(params_t["classifier"]),
    )
    return float(total.data), grads


# ---------------------------------------------------------------------------
# Incremental inference forward
# ---------------------------------------------------------------------------


class EncoderState:
    """Cached per-event embeddings/keys/values for a batch of histories.

    Histories are padded to a shared capacity; padded slots are masked to
    exact zeros inside every contraction, so a sequence's outputs do not
    depend on the batch it shares or on unused capacity.  ``append`` admits
    one new event per sequence in O(history) without recomputing the cache.
    """

    def __init__(self, params: EncoderParams, config: EncoderConfig, capacity: int):
        self.params = params
        self.config = config
        self.capacity = capacity

    @classmethod
    def from_histories(
        cls,
        params: EncoderParams,
        config: EncoderConfig,
        histories: Sequence[tuple[np.ndarray, np.ndarray]],
        extra_slots: int = 0,
    ) -> "EncoderState":
        B = len(histories)
        cap = max((len(t) for t, _ in histories), default=0) + extra_slots
        state = cls(params, config, cap)
        L, H = config.n_layers, config.n_heads
        dm, dz = config.d_model, config.d_embed
        dk, dv = config.d_qk // H, dm // H

        state.times = np.zeros((B, cap))
        state.marks = np.zeros((B, cap), dtype=np.intp)
        state.n_valid = np.array([len(t) for t, _ in histories], dtype=np.intp)
        for b, (t, m) in enumerate(histories):
            state.times[b, : len(t)] = t
            state.marks[b, : len(t)] = m
        state.z = np.zeros((B, cap, dz))
        state.z[:] = temporal_embedding(state.times, dz)
        state.E = [np.zeros((B, cap, dm)) for _ in range(L + 1)]
        state.keys = [np.zeros((B, cap, H, dk)) for _ in range(L)]
        state.vals = [np.zeros((B, cap, H, dv)) for _ in range(L)]

        if cap == 0:
            return state
        # causal self pass: event n's own embedding attends to events < n
        inv_scale = 1.0 / np.sqrt(dz)
        causal = np.tril(np.ones((cap, cap)), k=-1)[None, :, None, :]
        state.E[0][:] = params.base[state.marks]
        for ell in range(L):
            Xh = np.concatenate([state.z, state.E[ell]], axis=-1)
            state.keys[ell][:] = _project(Xh, params.keys[ell], H)
            state.vals[ell][:] = _project(Xh, params.values[ell], H)
            q = _project(Xh, params.queries[ell], H)
            scores = (
                np.einsum("bqhd,bnhd->bqhn", q, state.keys[ell], optimize=False)
                * inv_scale
            )
            alpha = np.exp(np.clip(scores, -SCORE_CLIP, SCORE_CLIP)) * causal
            norm = 1.0 + alpha.sum(axis=-1)
            numer = np.einsum("bqhn,bnhv->bqhv", alpha, state.vals[ell], optimize=False)
            upd = np.tanh((numer / norm[..., None]).reshape(B, cap, dm))
            state.E[ell + 1][:] = state.E[ell] + upd
        return state

    def query(self, query_times: np.ndarray, visible: np.ndarray):
        """Log mark probabilities for queries against cached histories.

        ``query_times``/``visible`` have shape (B, Q); query (b, q) attends
        to the first ``visible[b, q]`` cached events, all of which must be
        strictly earlier than the query time.  Returns ``(log_pmf, stacks)``
        with ``log_pmf`` of shape (B, Q, K) and per-layer stacks of shape
        (B, Q, K, d_model).
        """
        cfg = self.config
        B, Q = query_times.shape
        K, H, dm = cfg.K, cfg.n_heads, cfg.d_model
        inv_scale = 1.0 / np.sqrt(cfg.d_embed)
        zq = temporal_embedding(query_times, cfg.d_embed)  # (B,Q,dz)
        zq = np.broadcast_to(zq[:, :, None, :], (B, Q, K, cfg.d_embed))
        mask = (
            np.arange(self.capacity)[None, None, :] < visible[:, :, None]
        ).astype(np.float64)[:, :, None, None, :]
        Qemb = np.broadcast_to(self.params.base, (B, Q, K, dm)).copy()
        stacks = [Qemb]
        for ell in range(cfg.n_layers):
            Xq = np.concatenate([zq, Qemb], axis=-1)
            q = _project(Xq, self.params.queries[ell], H)
            scores = (
                np.einsum("bqkhd,bnhd->bqkhn", q, self.keys[ell], optimize=False)
                * inv_scale
            )
            if np.any(np.abs(scores) > SCORE_CLIP):
                logger.warning("attention scores clamped during query")
            alpha = np.exp(np.clip(scores, -SCORE_CLIP, SCORE_CLIP)) * mask
            norm = 1.0 + alpha.sum(axis=-1)
            numer = np.einsum(
                "bqkhn,bnhv->bqkhv", alpha, self.vals[ell], optimize=False
            )
            upd = np.tanh((numer / norm[..., None]).reshape(B, Q, K, dm))
            Qemb = stacks[-1] + upd
            stacks.append(Qemb)
        h = np.concatenate(stacks, axis=-1)
        logits = np.einsum("bqkd,kd->bqk", h, self.params.classifier, optimize=False)
        shift = logits.max(axis=-1, keepdims=True)
        log_pmf = logits - shift
        log_pmf = log_pmf - np.log(np.exp(log_pmf).sum(axis=-1, keepdims=True))
        return log_pmf, stacks

    def append(self, t: np.ndarray, k: np.ndarray, stacks) -> None:
        """Admit one new event per sequence, reusing query-time stacks.

        ``stacks`` must come from a :meth:`query` at times ``t`` with
        ``visible = n_valid`` (the new event's own embedding equals the query
        embedding at its mark).
        """
        cfg = self.config
        B = t.shape[0]
        rows = np.arange(B)
        pos = self.n_valid
        if np.any(pos >= self.capacity):
            raise ValueError("encoder state capacity exhausted")
        self.times[rows, pos] = t
        self.marks[rows, pos] = k
        z_new = temporal_embedding(t, cfg.d_embed)
        self.z[rows, pos] = z_new
        for ell in range(cfg.n_layers + 1):
            self.E[ell][rows, pos] = stacks[ell][rows, 0, k]
        for ell in range(cfg.n_layers):
            X = np.concatenate([z_new, self.E[ell][rows, pos]], axis=-1)
            self.keys[ell][rows, pos] = _project(X, self.params.keys[ell], cfg.n_heads)
            self.vals[ell][rows, pos] = _project(
                X, self.params.values[ell], cfg.n_heads
            )
        self.n_valid = pos + 1


def _project(x: np.ndarray, w: np.ndarray, n_heads: int) -> np.ndarray:
    """Row-wise linear map followed by a head split of the last axis."""
    out = x @ w.T
    return out.reshape(out.shape[:-1] + (n_heads, out.shape[-1] // n_heads))


_history_arrays = history_arrays


def encode(
    params: EncoderParams, config: EncoderConfig, history, query: tuple[float, int]
) -> EmbeddingStack:
    """Embedding stack for a single query pair given an earlier history."""
    t, k = query
    times, marks = _history_arrays(history)
    if times.size and times.max() >= t:
        raise ValueError("history contains events at or after the query time")
    state = EncoderState.from_histories(params, config, [(times, marks)])
    _, stacks = state.query(
        np.array([[t]]), np.array([[times.size]], dtype=np.intp)
    )
    return EmbeddingStack(layers=tuple(s[0, 0, k] for s in stacks))


def mark_pmf(params: EncoderParams, config: EncoderConfig, history, t: float):
    """Conditional mark probabilities at time ``t`` given the history."""
    times, marks = _history_arrays(history)
    if times.size and times.max() >= t:
        raise ValueError("history contains events at or after the query time")
    state = EncoderState.from_histories(params, config, [(times, marks)])
    log_pmf, _ = state.query(
        np.array([[t]]), np.array([[times.size]], dtype=np.intp)
    )
    return np.exp(log_pmf[0, 0])


def sequence_mark_log_pmf(
    params: EncoderParams, config: EncoderConfig, seq: EventSequence
) -> np.ndarray:
    """Log mark probabilities at every event time given its strict prefix;
    shape (N, K)."""
    n = len(seq)
    if n == 0:
        return np.zeros((0, config.K))
    state = EncoderState.from_histories(params, config, [(seq.times, seq.marks)])
    log_pmf, _ = state.query(
        seq.times[None, :], np.arange(n, dtype=np.intp)[None, :]
    )
    return log_pmf[0]


def mark_log_pmf_at(
    params: EncoderParams,
    config: EncoderConfig,
    history,
    query_times: np.ndarray,
    visible: np.ndarray,
) -> np.ndarray:
    """Log mark probabilities at arbitrary times; ``visible[i]`` bounds the
    history prefix the i-th query may see.  Shape (Q, K)."""
    times, marks = _history_arrays(history)
    state = EncoderState.from_histories(params, config, [(times, marks)])
    log_pmf, _ = state.query(
        np.asarray(query_times, dtype=np.float64)[None, :],
        np.asarray(visible, dtype=np.intp)[None, :],
    )
    return log_pmf[0]


def sequence_mark_log_likelihood(
    params: EncoderParams, config: EncoderConfig, seq: EventSequence
) -> float:
    if len(seq) == 0:
        return 0.0
    log_pmf = sequence_mark_log_pmf(params, config, seq)
    return float(log_pmf[np.arange(len(seq)), seq.marks].sum())


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainOptions:
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    patience: int = 10


@dataclass
class TrainResult:
    params: EncoderParams
    dev_curve: list[float] = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False


def _adam_step(arrays, grads, m, v, step, lr, b1=0.9, b2=0.999, eps=1e-8):
    for a, g, mi, vi in zip(arrays, grads, m, v):
        mi *= b1
        mi += (1 - b1) * g
        vi *= b2
        vi += (1 - b2) * g * g
        mhat = mi / (1 - b1**step)
        vhat = vi / (1 - b2**step)
        a += lr * mhat / (np.sqrt(vhat) + eps)  # ascent on the log-likelihood


def train_marks(
    config: EncoderConfig,
    train: Sequence[EventSequence],
    dev: Sequence[EventSequence],
    opts: TrainOptions | None = None,
) -> TrainResult:
    """Adam ascent on the mark objective with dev-based early stopping.

    Deterministic for a fixed config seed: initialization, batch order, and
    gradient reduction order are all derived from it.
    """
    opts = opts or TrainOptions()
    if not len(train) or not len(dev):
        raise ValueError("train and dev splits must be non-empty")
    params = init_encoder_params(config)
    result = TrainResult(params=params.copy())
    if opts.epochs == 0:
        return result

    arrays = params.tensors()
    m = [np.zeros_like(a) for a in arrays]
    v = [np.zeros_like(a) for a in arrays]
    shuffle_rng = np.random.default_rng([config.seed, 1])
    best_dev = -np.inf
    stale = 0
    step = 0
    for epoch in range(opts.epochs):
        order = shuffle_rng.permutation(len(train))
        for start in range(0, len(order), opts.batch_size):
            batch = [train[i] for i in order[start : start + opts.batch_size]]
            try:
                _, grads = mark_log_likelihood_and_grad(params, config, batch)
            except FloatingPointError as exc:
                logger.error("aborting training: %s", exc)
                result.diverged = True
                return result
            step += 1
            _adam_step(arrays, grads.tensors(), m, v, step, opts.lr)
        dev_ll = float(
            sum(sequence_mark_log_likelihood(params, config, s) for s in dev)
        )
        result.dev_curve.append(dev_ll)
        if dev_ll > best_dev:
            best_dev = dev_ll
            result.params = params.copy()
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale > opts.patience:
                break
    return result


# ---------------------------------------------------------------------------
# Estimator facade
# ---------------------------------------------------------------------------


class AttentionMarkClassifier(BaseEstimator):
    """Mark classifier with a continuous-time attention encoder.

    ``fit`` expects a list of event sequences plus a dev list for early
    stopping (``X_dev``); hyperparameters mirror :class:`EncoderConfig` and
    :class:`TrainOptions`.
    """

    def __init__(
        self,
        K=None,
        n_layers=2,
        d_model=16,
        d_qk=16,
        n_heads=1,
        seed=0,
        epochs=200,
        batch_size=8,
        lr=1e-3,
        patience=10,
    ):
        self.K = K
        self.n_layers = n_layers
        self.d_model = d_model
        self.d_qk = d_qk
        self.n_heads = n_heads
        self.seed = seed
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.patience = patience

    def _config(self, K: int) -> EncoderConfig:
        return EncoderConfig(
            K=K,
            n_layers=self.n_layers,
            d_model=self.d_model,
            d_qk=self.d_qk,
            n_heads=self.n_heads,
            seed=self.seed,
        )

    def fit(self, X, y=None, X_dev=None):
        seqs = list(X)
        K = self.K
        if K is None:
            K = 1 + max((int(s.marks.max()) for s in seqs if len(s)), default=0)
        self.config_ = self._config(K)
        dev = list(X_dev) if X_dev is not None else seqs
        result = train_marks(
            self.config_,
            seqs,
            dev,
            TrainOptions(
                epochs=self.epochs,
                batch_size=self.batch_size,
                lr=self.lr,
                patience=self.patience,
            ),
        )
        self.params_ = result.params
        self.dev_curve_ = result.dev_curve
        return self

    def predict_proba(self, history, t: float):
        return mark_pmf(self.params_, self.config_, history, t)

    def predict(self, history, t: float) -> int:
        return int(np.argmax(self.predict_proba(history, t)))

    def score(self, X, y=None) -> float:
        """Mean per-sequence mark log-likelihood."""
        return float(
            np.mean(
                [
                    sequence_mark_log_likelihood(self.params_, self.config_, s)
                    for s in X
                ]
            )
        )
