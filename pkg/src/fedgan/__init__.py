"""Federated GAN simulation: local SGD on agent shards with periodic averaging,
plus numerical checks of its convergence theory."""
from .autodiff import NonFiniteError, ParamVector
from .datasets import Dataset, Partition, partition_noniid
from .federation import ConfigError, Schedule, TrajectoryLog, comm_report, run_centralized, run_fedgan
from .models import GanModel, LossSpec, make_analytic2d, make_conditional_gan, make_mlp_gan

__version__ = "0.1.0"

__all__ = [
    "NonFiniteError", "ParamVector", "Dataset", "Partition", "partition_noniid", "ConfigError",
    "Schedule", "TrajectoryLog", "comm_report", "run_centralized", "run_fedgan", "GanModel",
    "LossSpec", "make_analytic2d", "make_conditional_gan", "make_mlp_gan",
]
