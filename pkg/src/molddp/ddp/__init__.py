"""Distributed data-parallel training over pluggable transports."""

from .collectives import allreduce_mean, barrier, broadcast, broadcast_params, gather_json, sequential_mean
from .engine import (PHASES, EpochMetrics, PhaseTimings, TrainingAborted, TrainingResult, TrainJob, WorkerContext,
                     compute_delta, param_digest, run_training, run_worker, train_step)
from .transport import (InProcessMesh, ProtocolError, TcpTransport, Timeout, Transport, TransportFailure,
                        decode_frame, encode_frame, free_port)

__all__ = [
    "PHASES", "EpochMetrics", "InProcessMesh", "PhaseTimings", "ProtocolError", "TcpTransport", "Timeout",
    "TrainJob", "TrainingAborted", "TrainingResult", "Transport", "TransportFailure", "WorkerContext",
    "allreduce_mean", "barrier", "broadcast", "broadcast_params", "compute_delta", "decode_frame", "encode_frame",
    "free_port", "gather_json", "param_digest", "run_training", "run_worker", "sequential_mean", "train_step",
]
