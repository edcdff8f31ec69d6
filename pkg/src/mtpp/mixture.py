"""Per-previous-mark mixture of log-normals over inter-event times.

Slot 0 models each sequence's first event (no previous mark exists); slot
``k + 1`` models gaps that follow an event of internal mark ``k``.  Fitting is
plain expectation-maximization on the logs of the gaps, grouped by slot, with
k-means++ seeding so fits are reproducible.  Slots with no training
observations inherit the pooled (all-data) fit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr
from sklearn.base import BaseEstimator

from .events import TAU_MIN, Dataset, EventSequence, inter_event_times

# Floor on component scales; prevents single-point variance collapse.
S_MIN = 1e-3

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# exp() overflows double precision just above 709; a fitted component whose
# mean term exceeds this signals a degenerate fit rather than a usable model.
_MEAN_EXP_LIMIT = 700.0


def _slot(prev_mark: int | None) -> int:
    return 0 if prev_mark is None else int(prev_mark) + 1


@dataclass(frozen=True)
class MixtureParams:
    """Weights/means/scales per slot; component counts may differ by slot."""

    K: int
    weights: tuple[np.ndarray, ...]
    means: tuple[np.ndarray, ...]
    scales: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != self.K + 1:
            raise ValueError(f"expected {self.K + 1} slots, got {len(self.weights)}")
        for k, (w, mu, s) in enumerate(zip(self.weights, self.means, self.scales)):
            if not (w.shape == mu.shape == s.shape) or w.ndim != 1 or w.size == 0:
                raise ValueError(f"slot {k}: malformed component arrays")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"slot {k}: weights must form a simplex")
            if np.any(s < S_MIN):
                raise ValueError(f"slot {k}: scale below floor {S_MIN}")
            if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(s))):
                raise ValueError(f"slot {k}: non-finite parameters")

    def n_components(self, prev_mark: int | None = None) -> int:
        return self.weights[_slot(prev_mark)].size

    def log_pdf(self, tau, prev_mark: int | None):
        """log density of the gap, elementwise over ``tau``."""
        tau = np.asarray(tau, dtype=np.float64)
        if np.any(tau <= 0):
            raise ValueError("log_pdf requires tau > 0")
        j = _slot(prev_mark)
        w, mu, s = self.weights[j], self.means[j], self.scales[j]
        x = np.log(tau)[..., None]
        z = (x - mu) / s
        comp = -0.5 * z * z - np.log(s) - _LOG_SQRT_2PI
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        out = logsumexp(logw + comp, axis=-1) - np.log(tau)
        return out if out.ndim else float(out)

    def cdf(self, tau, prev_mark: int | None):
        """P(gap <= tau); 0 at tau = 0, monotone non-decreasing."""
        tau = np.asarray(tau, dtype=np.float64)
        if np.any(tau < 0):
            raise ValueError("cdf requires tau >= 0")
        j = _slot(prev_mark)
        w, mu, s = self.weights[j], self.means[j], self.scales[j]
        pos = tau > 0
        x = np.where(pos, tau, 1.0)
        z = (np.log(x)[..., None] - mu) / s
        out = np.where(pos, ndtr(z) @ w, 0.0)
        return out if out.ndim else float(out)

    def log_survival(self, tau, prev_mark: int | None):
        """log P(gap > tau), stable where the cdf is close to 1."""
        tau = np.asarray(tau, dtype=np.float64)
        if np.any(tau < 0):
            raise ValueError("log_survival requires tau >= 0")
        j = _slot(prev_mark)
        w, mu, s = self.weights[j], self.means[j], self.scales[j]
        pos = tau > 0
        x = np.where(pos, tau, 1.0)
        z = (np.log(x)[..., None] - mu) / s
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        out = np.where(pos, logsumexp(logw + log_ndtr(-z), axis=-1), 0.0)
        return out if out.ndim else float(out)

    def mean(self, prev_mark: int | None) -> float:
        """Closed-form expected gap.  Raises on exp overflow (degenerate fit)."""
        j = _slot(prev_mark)
        w, mu, s = self.weights[j], self.means[j], self.scales[j]
        active = w > 0
        arg = mu[active] + 0.5 * s[active] ** 2
        if np.any(arg > _MEAN_EXP_LIMIT):
            raise OverflowError(
                f"slot {j}: mixture mean overflows (mu + s^2/2 = {arg.max():.3g})"
            )
        return float(w[active] @ np.exp(arg))

    def mean_table(self) -> np.ndarray:
        """Expected gap per slot, shape (K + 1,)."""
        return np.array([self.mean(None)] + [self.mean(k) for k in range(self.K)])

    def to_json(self) -> str:
        return json.dumps(
            {
                "K": self.K,
                "M": max(w.size for w in self.weights),
                "slots": [
                    {
                        "weights": w.tolist(),
                        "means": m.tolist(),
                        "scales": s.tolist(),
                    }
                    for w, m, s in zip(self.weights, self.means, self.scales)
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MixtureParams":
        obj = json.loads(text)
        slots = obj["slots"]
        return cls(
            K=int(obj["K"]),
            weights=tuple(np.array(s["weights"], dtype=np.float64) for s in slots),
            means=tuple(np.array(s["means"], dtype=np.float64) for s in slots),
            scales=tuple(np.array(s["scales"], dtype=np.float64) for s in slots),
        )


# ---------------------------------------------------------------------------
# EM fitting
# ---------------------------------------------------------------------------


def _kmeanspp_centers(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, m):
        d2 = np.min((x[:, None] - np.array(centers)) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.size)])
        else:
            centers.append(rng.choice(x, p=d2 / total))
    return np.array(centers)


def em_gaussian_1d(
    x: np.ndarray,
    n_components: int,
    rng: np.random.Generator,
    max_iter: int = 200,
    tol: float = 1e-7,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[float]]:
    """EM for a 1-d Gaussian mixture; returns (weights, means, scales, trace).

    ``trace`` holds the per-observation log-likelihood after each iteration;
    it is non-decreasing because the M-step maximizes subject to the scale
    floor (the constrained maximizer is the floored unconstrained one).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    m = min(n_components, n)
    mu = _kmeanspp_centers(x, m, rng)
    spread = x.std()
    s = np.full(m, max(spread if spread > 0 else 1.0, S_MIN))
    w = np.full(m, 1.0 / m)

    trace: list[float] = []
    prev_obj = -np.inf
    for _ in range(max_iter):
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        z = (x[:, None] - mu) / s
        log_r = logw - 0.5 * z * z - np.log(s) - _LOG_SQRT_2PI
        norm = logsumexp(log_r, axis=1)
        obj = float(norm.mean())
        trace.append(obj)

        r = np.exp(log_r - norm[:, None])
        nk = r.sum(axis=0)
        safe = nk > 1e-300
        w = nk / n
        w = w / w.sum()
        mu = np.where(safe, (r * x[:, None]).sum(axis=0) / np.where(safe, nk, 1.0), mu)
        var = (r * (x[:, None] - mu) ** 2).sum(axis=0) / np.where(safe, nk, 1.0)
        s = np.where(safe, np.maximum(np.sqrt(var), S_MIN), s)

        if obj - prev_obj < tol:
            break
        prev_obj = obj
    return w, mu, s, trace


def fit_em(
    pairs: Iterable[tuple[float, int | None]],
    n_components: int,
    K: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-7,
) -> MixtureParams:
    """Fit per-slot log-normal mixtures to (gap, previous-mark) observations.

    Slots with fewer observations than ``n_components`` fall back to one
    component per observation; slots with none inherit the pooled fit over
    all gaps.  The censored tail of each sequence is not part of ``pairs``.
    """
    taus, slots = [], []
    for tau, prev in pairs:
        if tau < TAU_MIN:
            raise ValueError(f"gap {tau} below {TAU_MIN}")
        taus.append(float(tau))
        slots.append(_slot(prev))
    if not taus:
        raise ValueError("no observations to fit")
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    x = np.log(np.array(taus))
    slots_arr = np.array(slots)

    pooled = em_gaussian_1d(
        x, n_components, np.random.default_rng([seed, K + 1]), max_iter, tol
    )[:3]

    weights, means, scales = [], [], []
    for j in range(K + 1):
        xi = x[slots_arr == j]
        if xi.size == 0:
            w, mu, s = pooled
        else:
            w, mu, s, _ = em_gaussian_1d(
                xi, n_components, np.random.default_rng([seed, j]), max_iter, tol
            )
        weights.append(w)
        means.append(mu)
        scales.append(s)
    return MixtureParams(
        K=K, weights=tuple(weights), means=tuple(means), scales=tuple(scales)
    )


def training_pairs(sequences: Iterable[EventSequence]):
    """All (gap, previous-mark) observations from the given sequences."""
    pairs: list[tuple[float, int | None]] = []
    for seq in sequences:
        pairs.extend(inter_event_times(seq))
    return pairs


def sequence_slots_and_gaps(seq: EventSequence) -> tuple[np.ndarray, np.ndarray]:
    """Mixture slot and gap for every event of the sequence."""
    if len(seq) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    slots = np.concatenate([[0], seq.marks[:-1] + 1])
    gaps = np.diff(np.concatenate([[0.0], seq.times]))
    return slots, gaps


def time_log_likelihood(params: MixtureParams, seq: EventSequence) -> float:
    """Gap log-densities plus the log survival of the censored tail."""
    slots, gaps = sequence_slots_and_gaps(seq)
    total = 0.0
    for j in np.unique(slots):
        prev = None if j == 0 else int(j) - 1
        total += float(np.sum(params.log_pdf(gaps[slots == j], prev)))
    tail = seq.window_end - seq.last_time
    total += params.log_survival(tail, seq.last_mark)
    return float(total)


# ---------------------------------------------------------------------------
# Estimator facade
# ---------------------------------------------------------------------------


class LogNormalMixtureModel(BaseEstimator):
    """Inter-event-time model: per-previous-mark log-normal mixtures.

    Parameters
    ----------
    n_components : number of mixture components per slot.
    K : mark-alphabet size; inferred from the data when None.
    seed : EM initialization seed.
    """

    def __init__(self, n_components=16, K=None, seed=0, max_iter=200, tol=1e-7):
        self.n_components = n_components
        self.K = K
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        if isinstance(X, Dataset):
            seqs: Sequence[EventSequence] = X.splits["train"]
            K = X.K if self.K is None else self.K
        else:
            seqs = list(X)
            K = self.K
            if K is None:
                K = 1 + max(
                    (int(s.marks.max()) for s in seqs if len(s)), default=0
                )
        self.K_ = K
        self.params_ = fit_em(
            training_pairs(seqs),
            self.n_components,
            K,
            seed=self.seed,
            max_iter=self.max_iter,
            tol=self.tol,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("model is not fitted")

    def log_density(self, tau, prev_mark: int | None):
        self._check_fitted()
        return self.params_.log_pdf(tau, prev_mark)

    def conditional_mean(self, prev_mark: int | None) -> float:
        self._check_fitted()
        return self.params_.mean(prev_mark)

    def sequence_log_likelihood(self, seq: EventSequence) -> float:
        self._check_fitted()
        return time_log_likelihood(self.params_, seq)

    def score(self, X, y=None) -> float:
        """Mean per-sequence time log-likelihood."""
        seqs = X.splits["test"] if isinstance(X, Dataset) else list(X)
        return float(np.mean([self.sequence_log_likelihood(s) for s in seqs]))
