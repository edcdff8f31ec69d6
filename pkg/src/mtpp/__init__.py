"""Marked temporal point processes: a per-mark log-normal mixture over
inter-event times paired with a continuous-time attention classifier over
marks, with closed-form likelihood, deterministic long-horizon rollout, and
thinning-based baselines."""

__version__ = "0.1.0"

from .attention import (
    AttentionMarkClassifier,
    EncoderConfig,
    EncoderParams,
    attention_weight,
    encode,
    mark_pmf,
    temporal_embedding,
    train_marks,
)
from .events import (
    Dataset,
    Event,
    EventSequence,
    censored_tail,
    inter_event_times,
    load_dataset,
    write_dataset,
)
from .metrics import bootstrap_ci, loglik_decomposed, loglik_intensity_check, next_event_scores, otd, rmse_star
from .mixture import LogNormalMixtureModel, MixtureParams, fit_em, time_log_likelihood
from .predict import PredictionHorizon, benchmark_inference, predict_next, rollout, rollout_thinning
from .simulate import (
    HawkesParams,
    HawkesProcess,
    IntensityModel,
    DecomposedIntensityModel,
    hawkes_intensity,
    make_synthetic,
    thinning_sample,
)

__all__ = [
    "AttentionMarkClassifier",
    "Dataset",
    "DecomposedIntensityModel",
    "EncoderConfig",
    "EncoderParams",
    "Event",
    "EventSequence",
    "HawkesParams",
    "HawkesProcess",
    "IntensityModel",
    "LogNormalMixtureModel",
    "MixtureParams",
    "PredictionHorizon",
    "attention_weight",
    "benchmark_inference",
    "bootstrap_ci",
    "censored_tail",
    "encode",
    "fit_em",
    "hawkes_intensity",
    "inter_event_times",
    "load_dataset",
    "loglik_decomposed",
    "loglik_intensity_check",
    "make_synthetic",
    "mark_pmf",
    "next_event_scores",
    "otd",
    "predict_next",
    "rmse_star",
    "rollout",
    "rollout_thinning",
    "temporal_embedding",
    "thinning_sample",
    "time_log_likelihood",
    "train_marks",
    "write_dataset",
]
