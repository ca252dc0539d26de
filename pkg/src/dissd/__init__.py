"""Distributed semi-supervised debiased sparse estimation."""

from dissd.baselines import csl, local_lasso, oneshot_avg_debias, pooled_lasso
from dissd.cluster_sim import Cluster, CommLedger, Machine
from dissd.dissd_glm import run_dissd_glm
from dissd.dissd_mest import DissdConfig, DissdRun, DissdState, run_dissd_mest
from dissd.inference import coordinate_intervals
from dissd.model_zoo import (
    absolute_loss,
    biweight_kernel,
    huber_loss,
    logistic_link,
    square_loss,
)
from dissd.scio import PrecisionEstimate, scio_full, scio_row
from dissd.synth_data import ClusterData, GroundTruth, make_ground_truth, sample_cluster

__version__ = "0.1.0"

__all__ = [
    "Cluster",
    "ClusterData",
    "CommLedger",
    "DissdConfig",
    "DissdRun",
    "DissdState",
    "GroundTruth",
    "Machine",
    "PrecisionEstimate",
    "absolute_loss",
    "biweight_kernel",
    "coordinate_intervals",
    "csl",
    "huber_loss",
    "local_lasso",
    "logistic_link",
    "make_ground_truth",
    "oneshot_avg_debias",
    "pooled_lasso",
    "run_dissd_glm",
    "run_dissd_mest",
    "sample_cluster",
    "scio_full",
    "scio_row",
    "square_loss",
]
