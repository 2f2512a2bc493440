"""SPMD training: replicate, shard, step, average gradients, repeat."""

from __future__ import annotations

import hashlib
import logging
import multiprocessing as mp
import threading
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dataload import Loader, open_source, shard_indices
from ..gcnn import (Hyper, ModelConfig, ModelState, adamw_step, backward_from_output, degree_statistic,
                    evaluate, forward, init_params, save_checkpoint)
from ..graphenc import SplitSpec, split_dataset
from .collectives import allreduce_mean, barrier, broadcast, broadcast_params, gather_json
from .transport import DEFAULT_TIMEOUT, InProcessMesh, TcpTransport, Transport, free_port

log = logging.getLogger("molddp.ddp")

PHASES = ("dataload", "forward", "backward", "optimizer", "gradient_aggregation")
_DTYPES = {"f32": np.float32, "f64": np.float64}


class TrainingAborted(RuntimeError):
    """A rank failed; ``errors`` maps rank -> formatted traceback."""

    def __init__(self, errors: dict[int, str]):
        self.errors = dict(sorted(errors.items()))
        first = next(iter(self.errors.items()))
        super().__init__(f"{len(self.errors)} rank(s) failed; rank {first[0]}:\n{first[1]}")


@dataclass
class PhaseTimings:
    rank: int
    epoch: int
    dataload: float = 0.0
    forward: float = 0.0
    backward: float = 0.0
    optimizer: float = 0.0
    gradient_aggregation: float = 0.0
    total: float = 0.0
    steps: int = 0
    samples: int = 0

    def measured(self) -> float:
        return sum(getattr(self, p) for p in PHASES)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_mae: float
    val_mse: float
    val_mae: float
    samples: int
    wall_seconds: float


@dataclass
class WorkerContext:
    rank: int
    world_size: int
    transport: Transport | None
    seed: int
    loader: Loader | None
    state: ModelState
    hyper: Hyper
    algorithm: str = "ring"


@dataclass
class TrainJob:
    """Everything a worker needs to rebuild the run on its own."""

    data: str
    backend: str = "gpack"
    model: dict = field(default_factory=dict)      # ModelConfig fields except node_features
    hyper: Hyper = field(default_factory=Hyper)
    world_size: int = 1
    seed: int = 0
    split_seed: int | None = None
    precision: str = "f32"
    algorithm: str = "ring"
    max_steps: int | None = None                   # per-run cap on optimizer steps
    evaluate: bool = True
    parity: bool = False
    out_dir: str | None = None
    prefetch_depth: int = 0
    source_options: dict = field(default_factory=dict)
    timeout: float = DEFAULT_TIMEOUT
    stop_val_mae: float | None = None              # end the run after the first epoch below this

    def __post_init__(self):
        if self.world_size < 1:
            raise ValueError("world_size must be at least 1")
        if self.precision not in _DTYPES:
            raise ValueError(f"precision must be one of {sorted(_DTYPES)}")
        if self.hyper.local_batch_size < 1:
            raise ValueError("local batch size must be positive")


@dataclass
class TrainingResult:
    state: ModelState
    timings: list[list[PhaseTimings]]   # [rank][epoch]
    history: list[EpochMetrics]
    param_digests: list[str]            # one per rank; all equal on success
    parity: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    steps: int = 0


def param_digest(state: ModelState) -> str:
    h = hashlib.sha256()
    for k, a in state.params.items():
        h.update(k.encode())
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _flatten(grads: dict[str, np.ndarray], extra) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads.values()] + [np.asarray(extra, dtype=next(iter(grads.values())).dtype)])


def train_step(ctx: WorkerContext, batch, timings: PhaseTimings | None = None) -> tuple[float, float]:
    """One synchronous step; returns (loss, MAE) averaged over all ranks' batches."""
    state = ctx.state
    t0 = time.perf_counter()
    cache: dict = {}
    y_hat = forward(state, batch, cache)
    y = np.asarray(batch.y, dtype=state.dtype)
    diff = y_hat - y
    loss = np.mean(diff * diff)
    mae = np.mean(np.abs(diff))
    t1 = time.perf_counter()
    grads = backward_from_output(state, cache, 2 * diff / len(y))
    t2 = time.perf_counter()
    flat = _flatten(grads, [loss, mae])
    if ctx.world_size > 1:
        flat = allreduce_mean(ctx.transport, flat, ctx.algorithm)
    t3 = time.perf_counter()
    pos = 0
    for k, g in grads.items():
        state.grads[k] = flat[pos:pos + g.size].reshape(g.shape)
        pos += g.size
    adamw_step(state, ctx.hyper)
    t4 = time.perf_counter()
    if timings is not None:
        timings.forward += t1 - t0
        timings.backward += t2 - t1
        timings.gradient_aggregation += t3 - t2
        timings.optimizer += t4 - t3
        timings.steps += 1
        timings.samples += len(y)
    return float(flat[-2]), float(flat[-1])


def compute_delta(source, indices, chunk: int = 1024) -> float:
    degs = []
    for k in range(0, len(indices), chunk):
        b = source.get_batch(indices[k:k + chunk])
        degs.append(np.bincount(b.edge_index[1], minlength=b.num_nodes))
    return degree_statistic(np.concatenate(degs))


def _open(job: TrainJob):
    opts = dict(job.source_options) if job.backend == "inline" else {}
    return open_source(job.backend, job.data, **opts)


def _splits(job: TrainJob, n: int):
    seed = job.seed if job.split_seed is None else job.split_seed
    return split_dataset(n, SplitSpec(seed=seed))


def run_worker(rank: int, job: TrainJob, transport: Transport | None) -> dict:
    """Body of one SPMD rank. Returns a plain dict (picklable, JSON-able parts)."""
    w = job.world_size
    dtype = _DTYPES[job.precision]
    source = _open(job)
    train_idx, val_idx, test_idx = _splits(job, len(source))
    node_features = source.get(int(train_idx[0])).x.shape[1]
    cfg = ModelConfig(node_features=node_features, **job.model)
    if rank == 0:
        delta = compute_delta(source, train_idx)
        state = init_params(cfg, job.seed, dtype=dtype, delta=delta)
    else:
        state = init_params(cfg, job.seed, dtype=dtype)
    broadcast_params(transport, state)
    ctx = WorkerContext(rank, w, transport, job.seed, None, state, job.hyper, job.algorithm)
    timings: list[PhaseTimings] = []
    history: list[EpochMetrics] = []
    steps = 0
    out = Path(job.out_dir) if job.out_dir else None
    for epoch in range(job.hyper.max_epochs):
        shard = shard_indices(train_idx, rank, w, job.seed, epoch)
        ctx.loader = Loader(source, shard, job.hyper.local_batch_size, job.prefetch_depth)
        pt = PhaseTimings(rank, epoch)
        loss_sum = mae_sum = 0.0
        n_steps = 0
        t_epoch = time.perf_counter()
        it = iter(ctx.loader)
        while job.max_steps is None or steps < job.max_steps:
            t0 = time.perf_counter()
            batch = next(it, None)
            pt.dataload += time.perf_counter() - t0
            if batch is None:
                break
            loss, mae = train_step(ctx, batch, pt)
            loss_sum += loss
            mae_sum += mae
            n_steps += 1
            steps += 1
        pt.total = time.perf_counter() - t_epoch
        if hasattr(it, "close"):
            it.close()
        timings.append(pt)
        if rank == 0:
            val = {"mse": float("nan"), "mae": float("nan")}
            if job.evaluate and len(val_idx):
                val = evaluate(state, Loader(source, val_idx, job.hyper.local_batch_size, drop_last=False))
            history.append(EpochMetrics(epoch, loss_sum / max(n_steps, 1), mae_sum / max(n_steps, 1),
                                        val["mse"], val["mae"], n_steps * job.hyper.local_batch_size * w,
                                        pt.total))
            h = history[-1]
            log.info("epoch %d: train_loss=%.5f train_mae=%.5f val_mae=%.5f (%.1fs)",
                     epoch, h.train_loss, h.train_mae, h.val_mae, pt.total)
            if out is not None:
                save_checkpoint(out / "checkpoint.gckp", state, {"epoch": epoch, "seed": job.seed})
        barrier(transport)
        if job.stop_val_mae is not None:
            hit = rank == 0 and bool(history[-1].val_mae < job.stop_val_mae)
            if broadcast(transport, np.array([hit], dtype=np.uint8))[0]:
                break
        if job.max_steps is not None and steps >= job.max_steps:
            break
    all_timings = gather_json(transport, [asdict(t) for t in timings])
    digests = gather_json(transport, param_digest(state))
    result = {"rank": rank, "steps": steps}
    if rank == 0:
        result.update(state=state, history=history, digests=digests,
                      timings=[[PhaseTimings(**t) for t in per] for per in all_timings])
        if job.parity:
            result["parity"] = {}
            for name, idx in (("train", train_idx), ("val", val_idx), ("test", test_idx)):
                ev = evaluate(state, Loader(source, idx, job.hyper.local_batch_size, drop_last=False))
                result["parity"][name] = (ev["y_true"], ev["y_pred"])
    return result


def _collect(results: dict[int, dict]) -> TrainingResult:
    r0 = results[0]
    return TrainingResult(r0["state"], r0["timings"], r0["history"], r0["digests"], r0.get("parity", {}),
                          r0["steps"])


def _run_threads(job: TrainJob) -> TrainingResult:
    meshes = InProcessMesh.create(job.world_size, timeout=job.timeout)
    results: dict[int, dict] = {}
    errors: dict[int, str] = {}

    def body(rank):
        try:
            results[rank] = run_worker(rank, job, meshes[rank] if job.world_size > 1 else None)
        except BaseException:
            errors[rank] = traceback.format_exc()
            meshes[rank].abort()

    threads = [threading.Thread(target=body, args=(r,), name=f"rank{r}") for r in range(job.world_size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise TrainingAborted(errors)
    return _collect(results)


def _process_main(rank: int, job: TrainJob, rendezvous: str, queue) -> None:
    transport = None
    try:
        if job.world_size > 1:
            transport = TcpTransport(rank, job.world_size, rendezvous, timeout=job.timeout)
        res = run_worker(rank, job, transport)
        queue.put((rank, "ok", res if rank == 0 else {"rank": rank}))
    except BaseException:
        queue.put((rank, "error", traceback.format_exc()))
    finally:
        if transport is not None:
            transport.close()


def _run_processes(job: TrainJob, rendezvous: str | None) -> TrainingResult:
    ctx = mp.get_context("spawn")
    rendezvous = rendezvous or f"127.0.0.1:{free_port()}"
    queue = ctx.Queue()
    procs = [ctx.Process(target=_process_main, args=(r, job, rendezvous, queue), name=f"rank{r}")
             for r in range(job.world_size)]
    for p in procs:
        p.start()
    results: dict[int, dict] = {}
    errors: dict[int, str] = {}
    pending = job.world_size
    deadline_grace = job.timeout + 30
    while pending:
        try:
            rank, status, payload = queue.get(timeout=deadline_grace)
        except Exception:
            for r, p in enumerate(procs):
                if r not in results and r not in errors:
                    errors[r] = f"rank {r} produced no result (exit code {p.exitcode})"
            break
        pending -= 1
        (results if status == "ok" else errors)[rank] = payload
        if status != "ok" and all(not p.is_alive() for p in procs):
            break
    for p in procs:
        p.join(timeout=5)
        if p.is_alive():
            p.terminate()
            p.join()
    for r, p in enumerate(procs):
        if r not in results and r not in errors:
            errors[r] = f"rank {r} exited with code {p.exitcode} without reporting"
    if errors:
        raise TrainingAborted(errors)
    return _collect(results)


def run_training(job: TrainJob, launcher: str = "thread", rendezvous: str | None = None) -> TrainingResult:
    """Run ``job`` on ``job.world_size`` ranks as threads or spawned processes."""
    if job.out_dir:
        Path(job.out_dir).mkdir(parents=True, exist_ok=True)
    if job.world_size == 1 and launcher == "thread":
        return _collect({0: run_worker(0, job, None)})
    if launcher == "thread":
        return _run_threads(job)
    if launcher == "process":
        return _run_processes(job, rendezvous)
    raise ValueError(f"unknown launcher {launcher!r}")


__all__ = ["PHASES", "EpochMetrics", "PhaseTimings", "TrainJob", "TrainingAborted", "TrainingResult",
           "WorkerContext", "compute_delta", "param_digest", "run_training", "run_worker",
           "train_step"]
