"""Distributed spatial-keyword kNN monitoring over an insert-only object stream."""

from .assign import Assignment, LoadBook, dkm_assign, greedy_assign
from .core import (
    UNBOUNDED,
    Ball,
    ConfigurationError,
    IngestError,
    Rect,
    SKObject,
    Subscription,
    Vocabulary,
    dist,
)
from .costmodel import SubsetNode, dkm_subscription_cost, kop_cost, sop_region_probability
from .partition import PartitionResult, dkm_partition, sop_quadtree_partition
from .runtime import (
    Coordinator,
    ExperimentConfig,
    Tick,
    TimestampMetrics,
    Workload,
    oracle_knn,
    run_experiment,
    summarize,
    verify_against_oracle,
)
from .stats import InitStats, build_init_stats, init_knn
from .worker import DkmWorker, KopWorker, SopWorker, make_worker

__version__ = "0.1.0"
