"""Independent reference computations used by several test files."""

import numpy as np

from molddp.dataload import collate
from molddp.gcnn import forward, init_params, loss_and_grads
from molddp.graphenc import GraphSample


FD_FLOOR = 1e-8  # well below the resolution of a central difference with h=1e-6


def small_graph(rng, gid, features=3, edge_features=2, n_min=1, n_max=6, p=0.5):
    n = int(rng.integers(n_min, n_max + 1))
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    src = [a for a, _ in pairs] + [b for _, b in pairs]
    dst = [b for _, b in pairs] + [a for a, _ in pairs]
    e = len(src)
    return GraphSample(gid, rng.normal(size=(n, features)), np.array([src, dst], dtype=np.int64).reshape(2, e),
                       rng.normal(size=(e, edge_features)), rng.normal(size=1))


def batch_loss(state, batch):
    d = forward(state, batch) - np.asarray(batch.y, dtype=np.float64)
    return float(np.mean(d * d))


def fd_gradient_check(cfg, graphs, seed=0, h=1e-6, jitter=0.1):
    """Worst per-tensor relative error of analytic vs central-difference gradients.

    Relative error of a tensor is max|g - fd| / max(max|fd|, FD_FLOOR) in 64-bit.
    The floor only matters for gradients that vanish identically (e.g. message
    biases under a std-only aggregator), where the ratio would divide rounding
    noise by rounding noise. Returns (worst error, {tensor: error}).
    """
    rng = np.random.default_rng(seed)
    batch = collate(graphs)
    state = init_params(cfg, seed, np.float64, delta=0.8)
    for p in state.params.values():
        p += rng.normal(scale=jitter, size=p.shape)
    _, grads = loss_and_grads(state, batch)
    errs = {}
    for name, p in state.params.items():
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            lp = batch_loss(state, batch)
            p[idx] = orig - h
            lm = batch_loss(state, batch)
            p[idx] = orig
            fd[idx] = (lp - lm) / (2 * h)
        errs[name] = float(np.max(np.abs(fd - grads[name])) / max(np.max(np.abs(fd)), FD_FLOOR))
    return max(errs.values()), errs


def sequential_mean_oracle(arrays):
    total = np.array(arrays[0], dtype=np.float64, copy=True)
    for a in arrays[1:]:
        total = total + a
    return total / len(arrays)
