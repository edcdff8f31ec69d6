"""Ground-truth generators and thinning-based sampling.

Provides exponential-kernel Hawkes processes, homogeneous Poisson, synthetic
dataset construction, the generic Ogata thinning loop over any intensity
model, and an intensity adapter that turns the fitted mixture + classifier
pair into a hazard for thinning.
"""

from __future__ import annotations

import abc
import logging
from dataclasses import dataclass

import numpy as np

from .attention import EncoderConfig, EncoderParams, EncoderState
from .events import TAU_MIN, Dataset, EventSequence, history_arrays
from .mixture import MixtureParams

logger = logging.getLogger(__name__)

# Intensities above this are clamped: the mixture hazard g/(1-G) overflows in
# the far right tail where the survival underflows, which would stall the
# thinning loop otherwise.  Clamps are logged so they stay observable.
HAZARD_CAP = 1e6


@dataclass(frozen=True)
class HawkesParams:
    """Baseline rate plus exponential kernels (jump alpha*beta, decay beta)."""

    mu: float
    kernels: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "kernels", tuple((float(a), float(b)) for a, b in self.kernels)
        )
        if self.mu < 0:
            raise ValueError("baseline rate must be >= 0")
        for a, b in self.kernels:
            if a < 0 or b <= 0:
                raise ValueError("kernels require alpha >= 0 and beta > 0")
        if self.branching_ratio >= 1:
            logger.warning(
                "branching ratio %.3f >= 1: process is non-stationary",
                self.branching_ratio,
            )

    @property
    def branching_ratio(self) -> float:
        return sum(a for a, _ in self.kernels)

    @property
    def stationary_rate(self) -> float:
        return self.mu / (1.0 - self.branching_ratio)


HAWKES1 = HawkesParams(mu=1.0, kernels=((0.8, 1.0),))
HAWKES2 = HawkesParams(mu=0.2, kernels=((0.4, 1.0), (0.4, 20.0)))


def hawkes_intensity(params: HawkesParams, t: float, history_times) -> float:
    """mu + sum over earlier events and kernels of alpha*beta*exp(-beta*dt)."""
    times = np.asarray(history_times, dtype=np.float64)
    past = times[times < t]
    lam = params.mu
    for a, b in params.kernels:
        lam += a * b * float(np.exp(-b * (t - past)).sum())
    return lam


class IntensityModel(abc.ABC):
    """Total intensity, mark distribution, and an intensity upper bound.

    ``upper_bound(from_t, ...)`` must dominate the total intensity at every
    time after ``from_t`` for as long as the history stays unchanged.
    """

    K: int

    @abc.abstractmethod
    def total_intensity(self, t: float, times: np.ndarray, marks: np.ndarray) -> float:
        ...

    @abc.abstractmethod
    def mark_probs(self, t: float, times: np.ndarray, marks: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def upper_bound(self, from_t: float, times: np.ndarray, marks: np.ndarray) -> float:
        ...


class HawkesProcess(IntensityModel):
    """Univariate exponential-kernel Hawkes process."""

    K = 1

    def __init__(self, params: HawkesParams):
        self.params = params

    def total_intensity(self, t, times, marks=None) -> float:
        return hawkes_intensity(self.params, t, times)

    def mark_probs(self, t, times, marks=None) -> np.ndarray:
        return np.ones(1)

    def upper_bound(self, from_t, times, marks=None) -> float:
        # exponential kernels decay between events, so the supremum over
        # (from_t, inf) is the right limit at from_t (events at from_t count)
        times = np.asarray(times, dtype=np.float64)
        past = times[times <= from_t]
        lam = self.params.mu
        for a, b in self.params.kernels:
            lam += a * b * float(np.exp(-b * (from_t - past)).sum())
        return lam

    # -- fast paths using O(1)-per-event recursive kernel state -------------

    def _state_at(self, times: np.ndarray, t: float) -> np.ndarray:
        """Per-kernel sum of alpha*beta*exp(-beta*(t - t_i)) over t_i <= t."""
        times = np.asarray(times, dtype=np.float64)
        past = times[times <= t]
        return np.array(
            [a * b * np.exp(-b * (t - past)).sum() for a, b in self.params.kernels]
        )

    def sample(
        self,
        horizon: dict,
        rng: np.random.Generator,
        history_times: np.ndarray | None = None,
    ) -> np.ndarray:
        """Thinning with recursive kernel state; returns new event times."""
        n_events = horizon.get("events")
        t_end = horizon.get("time")
        times = (
            np.asarray(history_times, dtype=np.float64)
            if history_times is not None
            else np.empty(0)
        )
        t = float(times[-1]) if times.size else 0.0
        state = self._state_at(times, t)
        betas = np.array([b for _, b in self.params.kernels])
        jumps = np.array([a * b for a, b in self.params.kernels])
        out = []
        while True:
            if n_events is not None and len(out) >= n_events:
                break
            lam_max = self.params.mu + state.sum()
            t_prop = t + rng.exponential(1.0 / lam_max)
            if t_end is not None and t_prop >= t_end:
                break
            decayed = state * np.exp(-betas * (t_prop - t))
            lam = self.params.mu + decayed.sum()
            t, state = t_prop, decayed
            if rng.uniform() * lam_max <= lam:
                if out and t - out[-1] < TAU_MIN:
                    t = out[-1] + TAU_MIN
                out.append(t)
                state = state + jumps
        return np.array(out)

    def next_gap_samples(
        self, history_times: np.ndarray, n_samples: int, rng: np.random.Generator
    ) -> np.ndarray:
        """Vectorized thinning draws of the gap to the next event."""
        t0 = float(history_times[-1]) if len(history_times) else 0.0
        s0 = self._state_at(history_times, t0)
        betas = np.array([b for _, b in self.params.kernels])
        gap = np.zeros(n_samples)
        state = np.tile(s0, (n_samples, 1))
        active = np.ones(n_samples, dtype=bool)
        while active.any():
            idx = np.flatnonzero(active)
            lam_max = self.params.mu + state[idx].sum(axis=1)
            step = rng.exponential(1.0, size=idx.size) / lam_max
            new_gap = gap[idx] + step
            decayed = state[idx] * np.exp(-betas * step[:, None])
            lam = self.params.mu + decayed.sum(axis=1)
            accept = rng.uniform(size=idx.size) * lam_max <= lam
            gap[idx] = new_gap
            state[idx] = decayed
            active[idx[accept]] = False
        return gap


class ConstantIntensity(IntensityModel):
    """Homogeneous Poisson process with uniform marks."""

    def __init__(self, rate: float, K: int = 1):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.K = K

    def total_intensity(self, t, times, marks=None) -> float:
        return self.rate

    def mark_probs(self, t, times, marks=None) -> np.ndarray:
        return np.full(self.K, 1.0 / self.K)

    def upper_bound(self, from_t, times, marks=None) -> float:
        return self.rate


class DecomposedIntensityModel(IntensityModel):
    """Intensity view of the fitted pair: hazard of the gap mixture times the
    conditional mark probabilities."""

    def __init__(
        self,
        mixture: MixtureParams,
        enc_params: EncoderParams,
        config: EncoderConfig,
        n_grid: int = 96,
        safety: float = 1.2,
    ):
        if mixture.K != config.K:
            raise ValueError("mixture and encoder disagree on K")
        self.mixture = mixture
        self.enc_params = enc_params
        self.config = config
        self.K = config.K
        self.n_grid = n_grid
        self.safety = safety
        self._cap_logged = False

    def _hazard(self, tau, prev_mark: int | None):
        tau = np.maximum(np.asarray(tau, dtype=np.float64), TAU_MIN)
        log_h = self.mixture.log_pdf(tau, prev_mark) - self.mixture.log_survival(
            tau, prev_mark
        )
        h = np.exp(np.minimum(log_h, np.log(HAZARD_CAP)))
        if np.any(log_h > np.log(HAZARD_CAP)) and not self._cap_logged:
            logger.warning("hazard clamped at %g (survival underflow)", HAZARD_CAP)
            self._cap_logged = True
        return h

    def _anchor(self, t, times, marks, inclusive=False) -> tuple[float, int | None]:
        times = np.asarray(times)
        past = np.flatnonzero(times <= t if inclusive else times < t)
        if past.size == 0:
            return 0.0, None
        i = past[-1]
        return float(times[i]), int(np.asarray(marks)[i])

    def total_intensity(self, t, times, marks) -> float:
        t_last, prev = self._anchor(t, times, marks)
        return float(self._hazard(t - t_last, prev))

    def mark_probs(self, t, times, marks) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64)
        marks = np.asarray(marks, dtype=np.intp)
        keep = times < t
        state = EncoderState.from_histories(
            self.enc_params, self.config, [(times[keep], marks[keep])]
        )
        log_pmf, _ = state.query(np.array([[t]]), state.n_valid[:, None])
        return np.exp(log_pmf[0, 0])

    def upper_bound(self, from_t, times, marks) -> float:
        """Grid maximization of the hazard from ``from_t`` rightward, with a
        safety factor; violations are caught at acceptance time."""
        # events at exactly from_t belong to the history of all later times
        t_last, prev = self._anchor(from_t, times, marks, inclusive=True)
        j = 0 if prev is None else prev + 1
        mu, s = self.mixture.means[j], self.mixture.scales[j]
        lo = max(from_t - t_last, 1e-9)
        hi = max(float(np.exp((mu + 6.0 * s).max())), 2.0 * lo)
        grid = np.geomspace(lo, hi, self.n_grid)
        return float(self.safety * self._hazard(grid, prev).max())


class BoundViolation(RuntimeError):
    """The model's intensity exceeded its own upper bound."""


def thinning_sample(
    model: IntensityModel,
    history,
    horizon: dict,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Ogata thinning: returns (times, marks) of the newly sampled events.

    ``horizon`` is ``{"events": P}`` for exactly P events or ``{"time": T}``
    for all events before absolute time T.  The upper bound is recomputed
    after every rejection as well as after every accepted event.
    """
    if not (("events" in horizon) ^ ("time" in horizon)):
        raise ValueError("horizon must specify exactly one of 'events' or 'time'")
    n_events = horizon.get("events")
    t_end = horizon.get("time")
    hist_times, hist_marks = history_arrays(history)
    n_hist = hist_times.size
    cap = max(2 * n_hist + 64, 128)
    buf_t = np.zeros(cap)
    buf_k = np.zeros(cap, dtype=np.intp)
    buf_t[:n_hist] = hist_times
    buf_k[:n_hist] = hist_marks
    n = n_hist
    t = buf_t[n - 1] if n else 0.0
    while True:
        if n_events is not None and n - n_hist >= n_events:
            break
        arr_t, arr_m = buf_t[:n], buf_k[:n]
        lam_max = model.upper_bound(t, arr_t, arr_m)
        if lam_max <= 0:
            if n_events is not None:
                raise BoundViolation("upper bound vanished before reaching P events")
            break
        t_prop = t + rng.exponential(1.0 / lam_max)
        if t_end is not None and t_prop >= t_end:
            break
        lam = model.total_intensity(t_prop, arr_t, arr_m)
        if lam > lam_max * (1.0 + 1e-9):
            raise BoundViolation(
                f"intensity {lam:.6g} exceeds bound {lam_max:.6g} at t={t_prop:.6g}"
            )
        accept = rng.uniform() * lam_max <= lam
        t = t_prop
        if accept:
            if n and t - buf_t[n - 1] < TAU_MIN:
                t = buf_t[n - 1] + TAU_MIN
            probs = model.mark_probs(t, arr_t, arr_m)
            k = int(rng.choice(model.K, p=probs / probs.sum()))
            if n == cap:
                cap *= 2
                buf_t = np.concatenate([buf_t, np.zeros(cap - n)])
                buf_k = np.concatenate([buf_k, np.zeros(cap - n, dtype=np.intp)])
            buf_t[n] = t
            buf_k[n] = k
            n += 1
    return buf_t[n_hist:n].copy(), buf_k[n_hist:n].copy()


def _cyclic_sequence(length: int, K: int, rng: np.random.Generator) -> EventSequence:
    gaps = np.maximum(rng.exponential(1.0, size=length), TAU_MIN)
    times = np.cumsum(gaps)
    marks = np.arange(length) % K
    return EventSequence(times, marks, times[-1] + TAU_MIN if length else 1.0)


def make_synthetic(
    kind: str,
    counts: dict[str, int],
    seed: int,
    length: int = 64,
    K: int = 3,
    rate: float = 1.0,
) -> Dataset:
    """Synthetic datasets with per-sequence seed-derived RNG streams.

    ``hawkes1``/``hawkes2`` use the fixed parameter sets and K = 1;
    ``poisson`` is homogeneous with the given rate; ``cyclic_marks`` emits
    the deterministic mark cycle 1..K with unit-exponential gaps.  Sequences
    have exactly ``length`` events; the observation window closes just after
    the last event.
    """
    kinds = {"hawkes1", "hawkes2", "poisson", "cyclic_marks"}
    if kind not in kinds:
        raise ValueError(f"kind must be one of {sorted(kinds)}")
    if any(n <= 0 for n in counts.values()):
        raise ValueError("split counts must be positive")
    splits: dict[str, tuple[EventSequence, ...]] = {}
    for split_idx, (name, n_seq) in enumerate(sorted(counts.items())):
        seqs = []
        for i in range(n_seq):
            rng = np.random.default_rng([seed, split_idx, i])
            if kind == "cyclic_marks":
                seqs.append(_cyclic_sequence(length, K, rng))
                continue
            if kind == "poisson":
                gaps = np.maximum(rng.exponential(1.0 / rate, size=length), TAU_MIN)
                times = np.cumsum(gaps)
            else:
                params = HAWKES1 if kind == "hawkes1" else HAWKES2
                times = HawkesProcess(params).sample({"events": length}, rng)
            seqs.append(
                EventSequence(
                    times, np.zeros(length, dtype=np.intp), times[-1] + TAU_MIN
                )
            )
        splits[name] = tuple(seqs)
    return Dataset(K=(K if kind == "cyclic_marks" else 1), splits=splits)


def hawkes_log_likelihood(params: HawkesParams, seq: EventSequence) -> float:
    """Exact log-likelihood under the Hawkes model (closed-form compensator)."""
    times = seq.times
    T = seq.window_end
    total = -params.mu * T
    for a, b in params.kernels:
        total -= float(np.sum(a * (1.0 - np.exp(-b * (T - times)))))
    # recursive per-kernel state for the point terms
    state = np.zeros(len(params.kernels))
    betas = np.array([b for _, b in params.kernels])
    jumps = np.array([a * b for a, b in params.kernels])
    prev_t = 0.0
    for t in times:
        state = state * np.exp(-betas * (t - prev_t))
        total += float(np.log(params.mu + state.sum()))
        state += jumps
        prev_t = t
    return total
