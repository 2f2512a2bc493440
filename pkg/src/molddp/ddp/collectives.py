"""Collectives over a :class:`~molddp.ddp.transport.Transport`.

Every rank must call the same collectives in the same order. Mean
allreduce comes in two flavours:

``naive``
    gather to rank 0, sum in rank-ascending order, divide, broadcast.
    Bit-reproducible and equal to a sequential reduction; the test path.
``ring``
    reduce-scatter then allgather over ``W`` chunks. Each rank moves
    ``2 (W-1)/W`` of the tensor regardless of ``W``. Results are still
    identical on every rank (each chunk is finalised by one owner and
    copied), but summation order differs per chunk.
"""

from __future__ import annotations

import json

import numpy as np

from ..gcnn import ModelState, ShapeMismatch
from .transport import Transport

ALGORITHMS = ("ring", "naive")


def _world(t: Transport | None) -> int:
    return 1 if t is None else t.world_size


def broadcast(t: Transport | None, array: np.ndarray, root: int = 0) -> np.ndarray:
    if _world(t) == 1:
        return array
    if t.rank == root:
        for r in range(t.world_size):
            if r != root:
                t.send(r, array)
        return array
    return t.recv(root)


def barrier(t: Transport | None) -> None:
    if _world(t) == 1:
        return
    token = np.zeros(1, dtype=np.uint8)
    if t.rank == 0:
        for r in range(1, t.world_size):
            t.recv(r)
        for r in range(1, t.world_size):
            t.send(r, token)
    else:
        t.send(0, token)
        t.recv(0)


def _agree_shape(t: Transport, shape: tuple[int, ...], dtype: np.dtype) -> None:
    """Raise ShapeMismatch on every rank if any contribution differs."""
    desc = np.array([len(shape), *shape, np.dtype(dtype).num], dtype=np.int64)
    if t.rank == 0:
        bad = []
        for r in range(1, t.world_size):
            other = t.recv(r)
            if other.shape != desc.shape or not np.array_equal(other, desc):
                bad.append(r)
        status = np.array([len(bad), *bad], dtype=np.int64)
        for r in range(1, t.world_size):
            t.send(r, status)
    else:
        t.send(0, desc)
        status = t.recv(0)
    if status[0]:
        raise ShapeMismatch(f"allreduce contributions from ranks {status[1:].tolist()} "
                            f"differ in shape or dtype from rank 0 {shape}")


def _allreduce_naive(t: Transport, a: np.ndarray) -> np.ndarray:
    if t.rank == 0:
        acc = a.copy()
        for r in range(1, t.world_size):
            acc = acc + t.recv(r)
        out = acc / a.dtype.type(t.world_size)
        for r in range(1, t.world_size):
            t.send(r, out)
        return out
    t.send(0, a)
    return t.recv(0)


def _allreduce_ring(t: Transport, a: np.ndarray) -> np.ndarray:
    w, r = t.world_size, t.rank
    flat = a.reshape(-1).copy()
    bounds = np.linspace(0, flat.size, w + 1).astype(np.int64)
    chunk = lambda c: slice(bounds[c], bounds[c + 1])  # noqa: E731
    right, left = (r + 1) % w, (r - 1) % w
    for s in range(w - 1):
        t.send(right, flat[chunk((r - s) % w)])
        c = (r - s - 1) % w
        flat[chunk(c)] += t.recv(left)
    own = (r + 1) % w
    flat[chunk(own)] /= flat.dtype.type(w)
    for s in range(w - 1):
        t.send(right, flat[chunk((r + 1 - s) % w)])
        flat[chunk((r - s) % w)] = t.recv(left)
    return flat.reshape(a.shape)


def allreduce_mean(t: Transport | None, tensor, algorithm: str = "ring") -> np.ndarray:
    """Elementwise mean of ``tensor`` over all ranks, returned on every rank."""
    a = np.ascontiguousarray(tensor)
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float64)
    if _world(t) == 1:
        return a.copy()
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown allreduce algorithm {algorithm!r}; choose from {ALGORITHMS}")
    _agree_shape(t, a.shape, a.dtype)
    if algorithm == "naive" or a.size < t.world_size:
        return _allreduce_naive(t, a)
    return _allreduce_ring(t, a)


def sequential_mean(contributions) -> np.ndarray:
    """Reference for the naive path: rank-ascending left fold, then divide."""
    acc = np.array(contributions[0], copy=True)
    for c in contributions[1:]:
        acc = acc + c
    return acc / acc.dtype.type(len(contributions))


def gather_json(t: Transport | None, obj, root: int = 0) -> list | None:
    """Collect one JSON-serialisable object per rank on ``root`` (None elsewhere)."""
    blob = np.frombuffer(json.dumps(obj).encode(), dtype=np.uint8)
    if _world(t) == 1:
        return [obj]
    if t.rank != root:
        t.send(root, blob)
        return None
    out = []
    for r in range(t.world_size):
        out.append(obj if r == root else json.loads(t.recv(r).tobytes().decode()))
    return out


def _state_vector(state: ModelState) -> np.ndarray:
    parts = [a.ravel() for d in (state.params, state.m, state.v) for a in d.values()]
    return np.concatenate(parts)


def broadcast_params(t: Transport | None, state: ModelState, root: int = 0) -> ModelState:
    """Overwrite parameters, optimizer moments, delta and step with root's (in place)."""
    if _world(t) == 1:
        return state
    for d in (state.m, state.v):
        for k, p in state.params.items():
            d.setdefault(k, np.zeros_like(p))
    vec = broadcast(t, _state_vector(state), root)
    meta = broadcast(t, np.array([state.delta, state.step], dtype=np.float64), root)
    if t.rank != root:
        if vec.shape != (3 * state.num_parameters(),) or vec.dtype != state.dtype:
            raise ShapeMismatch(f"rank {t.rank}: parameter layout differs from root")
        pos = 0
        for d in (state.params, state.m, state.v):
            for k, a in d.items():
                a[...] = vec[pos:pos + a.size].reshape(a.shape)
                pos += a.size
        state.delta = float(meta[0])
        state.step = int(meta[1])
    return state
