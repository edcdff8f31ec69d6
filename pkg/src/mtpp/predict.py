"""Next-event prediction and long-horizon rollout.

The point prediction for the next time is the fitted mixture's conditional
mean given the last mark; the mark prediction is the argmax of the
conditional mark distribution, evaluated at the true next time when it is
known (next-event scoring) and at the predicted time otherwise (rollout).
The long-horizon rollout appends each prediction to the working history and
repeats; it is fully deterministic and batches across sequences.  A
thinning-based rollout over any intensity model serves as the stochastic
baseline it is benchmarked against.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attention import EncoderConfig, EncoderParams, EncoderState
from .events import EventSequence, history_arrays
from .mixture import MixtureParams
from .simulate import IntensityModel, thinning_sample


@dataclass(frozen=True)
class PredictionHorizon:
    """A block of predicted events appended after a history."""

    times: np.ndarray
    marks: np.ndarray
    base_history_len: int

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "marks", np.asarray(self.marks, dtype=np.intp))
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError("predicted times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size


def _anchor(times: np.ndarray, marks: np.ndarray) -> tuple[float, int | None]:
    if times.size == 0:
        return 0.0, None
    return float(times[-1]), int(marks[-1])


def predict_next(
    mixture: MixtureParams,
    enc_params: EncoderParams,
    config: EncoderConfig,
    history,
    true_next_time: float | None = None,
) -> tuple[float, int]:
    """Point predictions (t_hat, k_hat) for the event after ``history``.

    ``k_hat`` is evaluated at ``true_next_time`` when given, else at
    ``t_hat``; argmax ties break toward the smallest mark.
    """
    times, marks = history_arrays(history)
    t_last, k_last = _anchor(times, marks)
    t_hat = t_last + mixture.mean(k_last)
    query_t = t_hat if true_next_time is None else float(true_next_time)
    if query_t <= t_last:
        raise ValueError("query time must exceed the last history time")
    state = EncoderState.from_histories(enc_params, config, [(times, marks)])
    log_pmf, _ = state.query(np.array([[query_t]]), state.n_valid[:, None])
    k_hat = int(np.argmax(log_pmf[0, 0]))
    return t_hat, k_hat


def predict_next_events(
    mixture: MixtureParams,
    enc_params: EncoderParams,
    config: EncoderConfig,
    seq: EventSequence,
) -> tuple[np.ndarray, np.ndarray]:
    """Next-event predictions for every position of an observed sequence.

    Position i predicts event i from its strict prefix: the time from the
    mixture mean given the previous mark, the mark from the conditional
    distribution at the true time t_i.  Shape (N,), (N,).
    """
    n = len(seq)
    if n == 0:
        return np.empty(0), np.empty(0, dtype=np.intp)
    means = mixture.mean_table()
    slots = np.concatenate([[0], seq.marks[:-1] + 1])
    prev_times = np.concatenate([[0.0], seq.times[:-1]])
    t_hats = prev_times + means[slots]
    state = EncoderState.from_histories(enc_params, config, [(seq.times, seq.marks)])
    log_pmf, _ = state.query(
        seq.times[None, :], np.arange(n, dtype=np.intp)[None, :]
    )
    k_hats = np.argmax(log_pmf[0], axis=1)
    return t_hats, k_hats


def _rollout_chunk(
    mixture: MixtureParams,
    enc_params: EncoderParams,
    config: EncoderConfig,
    histories: list[tuple[np.ndarray, np.ndarray]],
    P: int,
) -> list[PredictionHorizon]:
    B = len(histories)
    state = EncoderState.from_histories(enc_params, config, histories, extra_slots=P)
    means = mixture.mean_table()
    t_cur = np.array([t[-1] if len(t) else 0.0 for t, _ in histories])
    slot = np.array(
        [m[-1] + 1 if len(m) else 0 for _, m in histories], dtype=np.intp
    )
    out_t = np.empty((B, P))
    out_k = np.empty((B, P), dtype=np.intp)
    for p in range(P):
        t_next = t_cur + means[slot]
        log_pmf, stacks = state.query(t_next[:, None], state.n_valid[:, None])
        k_next = np.argmax(log_pmf[:, 0, :], axis=1)
        state.append(t_next, k_next, stacks)
        out_t[:, p] = t_next
        out_k[:, p] = k_next
        t_cur = t_next
        slot = k_next + 1
    return [
        PredictionHorizon(out_t[b], out_k[b], base_history_len=len(histories[b][0]))
        for b in range(B)
    ]


def rollout(
    mixture: MixtureParams,
    enc_params: EncoderParams,
    config: EncoderConfig,
    history,
    P: int,
) -> PredictionHorizon:
    """Deterministic long-horizon prediction of the next P events."""
    if P < 1:
        raise ValueError("P must be >= 1")
    return _rollout_chunk(
        mixture, enc_params, config, [history_arrays(history)], P
    )[0]


def rollout_batch(
    mixture: MixtureParams,
    enc_params: EncoderParams,
    config: EncoderConfig,
    histories: Sequence,
    P: int,
    n_threads: int = 1,
) -> list[PredictionHorizon]:
    """Batched rollout; results are independent of batching and threading."""
    if P < 1:
        raise ValueError("P must be >= 1")
    pairs = [history_arrays(h) for h in histories]
    if not pairs:
        return []
    n_threads = max(1, min(n_threads, len(pairs)))
    if n_threads == 1:
        return _rollout_chunk(mixture, enc_params, config, pairs, P)
    chunks = np.array_split(np.arange(len(pairs)), n_threads)
    results: list[PredictionHorizon | None] = [None] * len(pairs)
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        futures = {
            pool.submit(
                _rollout_chunk,
                mixture,
                enc_params,
                config,
                [pairs[i] for i in chunk],
                P,
            ): chunk
            for chunk in chunks
            if len(chunk)
        }
        for fut, chunk in futures.items():
            for i, horizon in zip(chunk, fut.result()):
                results[i] = horizon
    return results  # type: ignore[return-value]


def rollout_thinning(
    model: IntensityModel,
    history,
    P: int,
    n_samples: int,
    rng: np.random.Generator,
) -> PredictionHorizon:
    """Thinning-based long-horizon prediction.

    With ``n_samples == 1`` this is a single raw continuation.  With more
    samples, the prediction takes per-position mean times and modal marks
    (ties toward the smaller mark) across the sampled continuations.
    """
    if P < 1 or n_samples < 1:
        raise ValueError("P and n_samples must be >= 1")
    times, marks = history_arrays(history)
    draws_t = np.empty((n_samples, P))
    draws_k = np.empty((n_samples, P), dtype=np.intp)
    for s in range(n_samples):
        t_new, k_new = thinning_sample(model, (times, marks), {"events": P}, rng)
        draws_t[s] = t_new
        draws_k[s] = k_new
    if n_samples == 1:
        agg_t, agg_k = draws_t[0], draws_k[0]
    else:
        agg_t = draws_t.mean(axis=0)
        agg_k = np.array(
            [np.argmax(np.bincount(draws_k[:, p], minlength=model.K)) for p in range(P)]
        )
    return PredictionHorizon(agg_t, agg_k, base_history_len=times.size)


# ---------------------------------------------------------------------------
# Timing harness
# ---------------------------------------------------------------------------


def benchmark_inference(
    test_seqs: Sequence[EventSequence],
    mixture: MixtureParams,
    enc_params: EncoderParams,
    config: EncoderConfig,
    P: int,
    model: IntensityModel,
    n_samples: int = 1,
    repeats: int = 5,
    n_threads: int = 1,
    seed: int = 0,
) -> dict:
    """Wall-clock comparison of batched rollout vs sequential thinning rollout.

    Both are repeated ``repeats`` times over the prefixes of the test split
    (each sequence's last P events are held out).  Thinning runs one sequence
    at a time by construction.
    """
    histories = [
        (s.times[: max(len(s) - P, 0)], s.marks[: max(len(s) - P, 0)])
        for s in test_seqs
    ]
    report = {
        "n_sequences": len(histories),
        "P": P,
        "n_samples": n_samples,
        "repeats": repeats,
    }
    if not histories:
        report.update(
            rollout_seconds={"mean": 0.0, "std": 0.0, "runs": []},
            thinning_seconds={"mean": 0.0, "std": 0.0, "runs": []},
            speedup=float("nan"),
        )
        return report

    rollout_runs = []
    for _ in range(repeats):
        start = time.perf_counter()
        rollout_batch(mixture, enc_params, config, histories, P, n_threads=n_threads)
        rollout_runs.append(time.perf_counter() - start)

    thinning_runs = []
    for rep in range(repeats):
        start = time.perf_counter()
        for idx, hist in enumerate(histories):
            rng = np.random.default_rng([seed, rep, idx])
            rollout_thinning(model, hist, P, n_samples, rng)
        thinning_runs.append(time.perf_counter() - start)

    def summary(runs):
        return {
            "mean": float(np.mean(runs)),
            "std": float(np.std(runs)),
            "runs": [float(r) for r in runs],
        }

    report["rollout_seconds"] = summary(rollout_runs)
    report["thinning_seconds"] = summary(thinning_runs)
    report["speedup"] = float(
        report["thinning_seconds"]["mean"] / report["rollout_seconds"]["mean"]
    )
    return report
