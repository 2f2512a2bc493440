"""PNA-style graph convolution network with a hand-written backward pass.

Layer ``l`` maps node features ``x`` to

    m_ij  = W_msg [x_j ; e_ij] + b_msg                  for every edge j -> i
    A_i   = [agg_1({m_ij}), ..., agg_k({m_ij})]         mean / min / max / std
    x'_i  = relu( sum_s scale_s(d_i) * (U_s A_i) + b_upd )

where ``scale_s`` is 1 (identity), log(d+1)/delta (amplification) or
delta/log(d+1) (attenuation), and ``U_s`` is the block of the update
matrix acting on the scaler-``s`` copy of ``A``. Stacking the blocks in
(aggregator, scaler) order gives the usual single matrix over the
concatenation of all aggregator x scaler products. Isolated nodes get zero
aggregates and unit scalers.

Graph readout is a global mean pool followed by ReLU fully connected
layers and a width-1 affine output.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

AGGREGATORS = ("mean", "min", "max", "std")
SCALERS = ("identity", "amplification", "attenuation")
VAR_FLOOR = 1e-10


class ShapeMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyGraphSlot(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    node_features: int
    edge_features: int = 4
    num_conv_layers: int = 6
    hidden_width: int = 55
    fc_layers: int = 2
    aggregators: tuple[str, ...] = AGGREGATORS
    scalers: tuple[str, ...] = SCALERS
    use_edge_features: bool = True
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "aggregators", tuple(sorted(self.aggregators, key=AGGREGATORS.index)))
        object.__setattr__(self, "scalers", tuple(sorted(self.scalers, key=SCALERS.index)))
        if min(self.node_features, self.hidden_width, self.num_conv_layers) <= 0 or self.fc_layers < 0:
            raise ValueError("layer counts and widths must be positive")
        if not self.aggregators or set(self.aggregators) - set(AGGREGATORS):
            raise ValueError(f"aggregators must be a non-empty subset of {AGGREGATORS}")
        if "identity" not in self.scalers or set(self.scalers) - set(SCALERS):
            raise ValueError(f"scalers must include 'identity' and be a subset of {SCALERS}")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is implemented")

    @property
    def message_input(self) -> int:
        return self.edge_features if self.use_edge_features else 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class Hyper:
    learning_rate: float = 0.001
    local_batch_size: int = 128
    max_epochs: int = 3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, np.ndarray]
    delta: float = 1.0
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self) -> ModelState:
        return ModelState(self.config, {k: a.copy() for k, a in self.params.items()}, self.delta,
                          {k: a.copy() for k, a in self.grads.items()},
                          {k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()}, self.step)

    def astype(self, dtype) -> ModelState:
        cast = lambda d: {k: a.astype(dtype) for k, a in d.items()}  # noqa: E731
        return ModelState(self.config, cast(self.params), self.delta, cast(self.grads),
                          cast(self.m), cast(self.v), self.step)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.params.values()])

    def num_parameters(self) -> int:
        return sum(a.size for a in self.params.values())


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    width_in = cfg.node_features
    h = cfg.hidden_width
    blocks = len(cfg.aggregators) * len(cfg.scalers)
    for layer in range(cfg.num_conv_layers):
        shapes[f"conv{layer}.msg_w"] = (width_in + cfg.message_input, h)
        shapes[f"conv{layer}.msg_b"] = (h,)
        shapes[f"conv{layer}.upd_w"] = (blocks * h, h)
        shapes[f"conv{layer}.upd_b"] = (h,)
        width_in = h
    for k in range(cfg.fc_layers):
        shapes[f"fc{k}.w"] = (h, h)
        shapes[f"fc{k}.b"] = (h,)
    shapes["out.w"] = (h, 1)
    shapes["out.b"] = (1,)
    return shapes


def init_params(config: ModelConfig, seed: int, dtype=np.float32, delta: float = 1.0) -> ModelState:
    """Glorot-uniform weights, zero biases, zero optimizer moments."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 2:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-a, a, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    zeros = lambda: {k: np.zeros_like(p) for k, p in params.items()}  # noqa: E731
    if not delta > 0:
        raise ValueError("degree statistic delta must be positive")
    return ModelState(config, params, float(delta), zeros(), zeros(), zeros(), 0)


def degree_statistic(in_degrees) -> float:
    """Mean of log(d + 1) over node in-degrees."""
    d = np.asarray(in_degrees, dtype=np.float64)
    if d.size == 0:
        raise ValueError("no nodes to compute the degree statistic from")
    delta = float(np.mean(np.log(d + 1)))
    if not delta > 0:
        raise ValueError("degree statistic is zero; every node is isolated")
    return delta


# -- graph structure ---------------------------------------------------------

class Structure:
    """Edge bookkeeping shared by all layers for one batch.

    Incoming edges of node ``i`` are laid out in a padded table
    ``slots[:deg[i], i]`` (positions into the destination-grouped edge
    order, ties kept in edge order); unused slots point at a padding row.
    Slot-major layout keeps each slot plane contiguous.
    """

    def __init__(self, edge_index: np.ndarray, num_nodes: int):
        ei = np.asarray(edge_index)
        if ei.ndim != 2 or ei.shape[0] != 2:
            raise ShapeMismatch(f"edge_index must have shape (2, edges), got {ei.shape}")
        if ei.size and (ei.min() < 0 or ei.max() >= num_nodes):
            raise ShapeMismatch("edge_index refers to nodes outside the graph")
        self.num_nodes = num_nodes
        self.src = ei[0].astype(np.int64)
        self.dst = ei[1].astype(np.int64)
        self.num_edges = e = len(self.src)
        self.deg = np.bincount(self.dst, minlength=num_nodes)
        self.perm = np.argsort(self.dst, kind="stable")
        self.dst_sorted = self.dst[self.perm]
        self.slot = np.arange(e) - np.repeat(np.cumsum(self.deg) - self.deg, self.deg)
        width = int(self.deg.max()) if e else 0
        self.slots = np.full((width, num_nodes), e, dtype=np.int64)
        self.slots[self.slot, self.dst_sorted] = np.arange(e)
        # same layout keyed by source, for scattering message gradients back
        perm_src = np.argsort(self.src, kind="stable")
        src_deg = np.bincount(self.src, minlength=num_nodes)
        src_sorted = self.src[perm_src]
        src_slot = np.arange(e) - np.repeat(np.cumsum(src_deg) - src_deg, src_deg)
        self.src_slots = np.full((int(src_deg.max()) if e else 0, num_nodes), e, dtype=np.int64)
        self.src_slots[src_slot, src_sorted] = perm_src

    def scalers(self, names, delta: float, dtype) -> list[np.ndarray]:
        logd = np.log(self.deg.astype(np.float64) + 1)
        iso = self.deg == 0
        out = []
        for s in names:
            if s == "identity":
                val = np.ones(self.num_nodes)
            elif s == "amplification":
                val = np.where(iso, 1.0, logd / delta)
            else:
                val = np.where(iso, 1.0, delta / np.where(iso, 1.0, logd))
            out.append(val.astype(dtype)[:, None])
        return out

    def padded(self, values: np.ndarray, fill: float, by_source: bool = False) -> np.ndarray:
        """(max_degree, nodes, ...) gather of per-edge ``values``, ``fill`` in empty slots."""
        ext = np.empty((values.shape[0] + 1,) + values.shape[1:], dtype=values.dtype)
        ext[:-1] = values
        ext[-1] = fill
        return ext[self.src_slots if by_source else self.slots]

    def sum_by_source(self, values: np.ndarray) -> np.ndarray:
        """Sum per-edge ``values`` (original edge order) onto source nodes."""
        return self.padded(values, 0, by_source=True).sum(axis=0)


# -- layers -----------------------------------------------------------------

def _aggregate(cfg: ModelConfig, st: Structure, m_sorted: np.ndarray, cache: dict) -> np.ndarray:
    n, h = st.num_nodes, m_sorted.shape[1]
    deg = np.maximum(st.deg, 1).astype(m_sorted.dtype)[:, None]
    iso = (st.deg == 0)[:, None]
    summed = st.padded(m_sorted, 0).sum(axis=0)
    mean = summed / deg
    blocks = []
    for agg in cfg.aggregators:
        if agg == "mean":
            out = mean
        elif agg in ("max", "min"):
            fill = np.inf if agg == "min" else -np.inf
            pad = st.padded(m_sorted, fill)
            ext = pad.max(axis=0, initial=fill) if agg == "max" else pad.min(axis=0, initial=fill)
            # first slot attaining the extreme
            arg = np.zeros((n, h), dtype=np.int64)
            found = np.zeros((n, h), dtype=bool)
            for k in range(pad.shape[0]):
                hit = (pad[k] == ext) & ~found
                if k:
                    arg += hit * k
                found |= hit
            out = np.where(iso, 0, ext)
            cache[f"arg_{agg}"] = arg
        else:
            centered = m_sorted - mean[st.dst_sorted]
            var = st.padded(centered * centered, 0).sum(axis=0) / deg
            std = np.sqrt(var + VAR_FLOOR)
            out = np.where(iso, 0, std)
            cache["centered"] = centered
            cache["std"] = std
        blocks.append(out)
    return np.stack(blocks, axis=1)  # (nodes, aggregators, hidden)


def _aggregate_backward(cfg: ModelConfig, st: Structure, d_agg: np.ndarray, cache: dict,
                        num_edges: int) -> np.ndarray:
    """Gradient w.r.t. the destination-grouped messages."""
    n, _, h = d_agg.shape
    if not num_edges:
        return np.zeros((0, h), dtype=d_agg.dtype)
    deg = np.maximum(st.deg, 1).astype(d_agg.dtype)[:, None]
    width = st.slots.shape[0]
    # per-slot gradient planes, gathered to edges once at the end
    planes = np.zeros((width, n, h), dtype=d_agg.dtype)
    per_edge = None
    for a, agg in enumerate(cfg.aggregators):
        g = d_agg[:, a, :]
        if agg == "mean":
            planes += g / deg
        elif agg in ("max", "min"):
            arg = cache[f"arg_{agg}"]
            for k in range(width):
                planes[k] += np.where(arg == k, g, 0)
        else:
            per_edge = (g / (deg * cache["std"]))[st.dst_sorted] * cache["centered"]
    dm = planes[st.slot, st.dst_sorted]
    if per_edge is not None:
        dm += per_edge
    return dm


def conv_forward(x, edge_index, edge_attr, params: dict, delta: float, cfg: ModelConfig,
                 layer: int = 0, structure: Structure | None = None, cache: dict | None = None) -> np.ndarray:
    """One convolution layer; ``params`` holds ``conv{layer}.*`` entries."""
    st = structure or Structure(edge_index, x.shape[0])
    w_msg, b_msg = params[f"conv{layer}.msg_w"], params[f"conv{layer}.msg_b"]
    w_upd, b_upd = params[f"conv{layer}.upd_w"], params[f"conv{layer}.upd_b"]
    fin = x.shape[1]
    if w_msg.shape[0] != fin + cfg.message_input:
        raise ShapeMismatch(f"layer {layer} expects {w_msg.shape[0] - cfg.message_input} input features, got {fin}")
    h = w_msg.shape[1]
    proj = x @ w_msg[:fin]
    m = proj[st.src] + b_msg
    if cfg.use_edge_features:
        if edge_attr.shape != (st.num_edges, cfg.edge_features):
            raise ShapeMismatch(f"edge_attr has shape {edge_attr.shape}, expected ({st.num_edges}, {cfg.edge_features})")
        m = m + edge_attr @ w_msg[fin:]
    m_sorted = m[st.perm]
    local: dict = {}
    agg = _aggregate(cfg, st, m_sorted, local)
    n_a = len(cfg.aggregators)
    a_flat = agg.reshape(st.num_nodes, n_a * h)
    scales = st.scalers(cfg.scalers, delta, x.dtype)
    n_s = len(scales)
    # columns grouped by scaler: (aggregators*hidden, scalers*hidden)
    u_cols = w_upd.reshape(n_a, n_s, h, h).transpose(0, 2, 1, 3).reshape(n_a * h, n_s * h)
    proj_all = a_flat @ u_cols
    pre = b_upd + proj_all[:, :h]  # identity scaler is first by construction
    for s in range(1, n_s):
        pre += scales[s] * proj_all[:, s * h:(s + 1) * h]
    out = np.maximum(pre, 0)
    if cache is not None:
        local.update(x=x, a_flat=a_flat, scales=scales, pre=pre)
        cache[layer] = local
    return out


def conv_backward(d_out, edge_attr, params: dict, cfg: ModelConfig, layer: int, st: Structure,
                  cache: dict, grads: dict) -> np.ndarray:
    c = cache[layer]
    x, a_flat, scales, pre = c["x"], c["a_flat"], c["scales"], c["pre"]
    w_msg = params[f"conv{layer}.msg_w"]
    w_upd = params[f"conv{layer}.upd_w"]
    fin = x.shape[1]
    h = w_msg.shape[1]
    n_a, n_s = len(cfg.aggregators), len(cfg.scalers)
    d_pre = d_out * (pre > 0)
    grads[f"conv{layer}.upd_b"] = d_pre.sum(axis=0)
    u_cols = w_upd.reshape(n_a, n_s, h, h).transpose(0, 2, 1, 3).reshape(n_a * h, n_s * h)
    scaled = np.concatenate([d_pre] + [sc * d_pre for sc in scales[1:]], axis=1)
    d_cols = a_flat.T @ scaled
    grads[f"conv{layer}.upd_w"] = d_cols.reshape(n_a, h, n_s, h).transpose(0, 2, 1, 3).reshape(w_upd.shape)
    d_a = scaled @ u_cols.T
    dm_sorted = _aggregate_backward(cfg, st, d_a.reshape(st.num_nodes, n_a, h), c, st.num_edges)
    dm = np.empty_like(dm_sorted)
    dm[st.perm] = dm_sorted
    grads[f"conv{layer}.msg_b"] = dm.sum(axis=0)
    d_proj = st.sum_by_source(dm)
    d_wmsg = np.empty_like(w_msg)
    d_wmsg[:fin] = x.T @ d_proj
    if cfg.use_edge_features:
        d_wmsg[fin:] = edge_attr.T @ dm
    grads[f"conv{layer}.msg_w"] = d_wmsg
    return d_proj @ w_msg[:fin].T


def global_mean_pool(x: np.ndarray, batch_vector, num_graphs: int | None = None) -> np.ndarray:
    """Average node rows per graph slot."""
    bv = np.asarray(batch_vector, dtype=np.int64)
    if bv.shape[0] != x.shape[0]:
        raise ShapeMismatch("batch_vector length must equal the number of nodes")
    if num_graphs is None:
        num_graphs = int(bv.max()) + 1 if bv.size else 0
    counts = np.bincount(bv, minlength=num_graphs)
    if len(counts) > num_graphs or np.any(counts == 0):
        raise EmptyGraphSlot("every graph slot needs at least one node")
    order = np.argsort(bv, kind="stable")
    starts = np.cumsum(counts) - counts
    sums = np.add.reduceat(x[order], starts, axis=0)
    return sums / counts[:, None].astype(x.dtype)


def head_forward(pooled: np.ndarray, params: dict, cfg: ModelConfig, cache: dict | None = None) -> np.ndarray:
    h = pooled
    acts = [h]
    for k in range(cfg.fc_layers):
        w, b = params[f"fc{k}.w"], params[f"fc{k}.b"]
        if h.shape[1] != w.shape[0]:
            raise ShapeMismatch(f"fc{k} expects width {w.shape[0]}, got {h.shape[1]}")
        h = np.maximum(h @ w + b, 0)
        acts.append(h)
    w, b = params["out.w"], params["out.b"]
    if h.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"output layer expects width {w.shape[0]}, got {h.shape[1]}")
    if cache is not None:
        cache["head"] = acts
    return (h @ w + b)[:, 0]


def mse_loss(y_hat, y) -> float:
    y_hat = np.asarray(y_hat)
    y = np.asarray(y)
    if y_hat.shape != y.shape:
        raise LengthMismatch(f"prediction length {y_hat.shape} != target length {y.shape}")
    d = y_hat - y
    return float(np.mean(d * d))


# -- composed model ---------------------------------------------------------

def forward(state: ModelState, batch, cache: dict | None = None) -> np.ndarray:
    """Predictions for every graph of ``batch`` in the state's precision."""
    cfg = state.config
    dt = state.dtype
    x = np.asarray(batch.x, dtype=dt)
    ea = np.asarray(batch.edge_attr, dtype=dt)
    st = Structure(batch.edge_index, x.shape[0])
    if cache is not None:
        cache["structure"] = st
        cache["edge_attr"] = ea
    h = x
    for layer in range(cfg.num_conv_layers):
        h = conv_forward(h, batch.edge_index, ea, state.params, state.delta, cfg, layer, st, cache)
    pooled = global_mean_pool(h, batch.batch_vector, batch.num_graphs)
    if cache is not None:
        cache["batch_vector"] = np.asarray(batch.batch_vector)
        cache["num_graphs"] = batch.num_graphs
    return head_forward(pooled, state.params, cfg, cache)


def backward_from_output(state: ModelState, cache: dict, d_yhat: np.ndarray) -> dict[str, np.ndarray]:
    cfg = state.config
    p = state.params
    grads: dict[str, np.ndarray] = {}
    acts = cache["head"]
    d = d_yhat[:, None].astype(state.dtype)
    grads["out.w"] = acts[-1].T @ d
    grads["out.b"] = d.sum(axis=0)
    d = d @ p["out.w"].T
    for k in reversed(range(cfg.fc_layers)):
        d = d * (acts[k + 1] > 0)
        grads[f"fc{k}.w"] = acts[k].T @ d
        grads[f"fc{k}.b"] = d.sum(axis=0)
        d = d @ p[f"fc{k}.w"].T
    bv = cache["batch_vector"]
    counts = np.bincount(bv, minlength=cache["num_graphs"]).astype(state.dtype)
    d_nodes = (d / counts[:, None])[bv]
    st = cache["structure"]
    for layer in reversed(range(cfg.num_conv_layers)):
        d_nodes = conv_backward(d_nodes, cache["edge_attr"], p, cfg, layer, st, cache, grads)
    return {k: grads[k] for k in p}


def loss_and_grads(state: ModelState, batch) -> tuple[float, dict[str, np.ndarray]]:
    cache: dict = {}
    y_hat = forward(state, batch, cache)
    y = np.asarray(batch.y, dtype=state.dtype)
    if y_hat.shape != y.shape:
        raise LengthMismatch("prediction and target lengths differ")
    diff = y_hat - y
    loss = float(np.mean(diff * diff))
    grads = backward_from_output(state, cache, 2 * diff / len(y))
    return loss, grads


def backward(batch, state: ModelState) -> dict[str, np.ndarray]:
    """Gradient of the batch-mean MSE; also stored on ``state.grads``."""
    _, grads = loss_and_grads(state, batch)
    state.grads = grads
    return grads


def adamw_step(state: ModelState, hyper: Hyper) -> ModelState:
    """Decoupled weight decay, then a bias-corrected Adam update (in place)."""
    state.step += 1
    t = state.step
    lr, wd, b1, b2, eps = hyper.learning_rate, hyper.weight_decay, hyper.beta1, hyper.beta2, hyper.eps
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for k, p in state.params.items():
        g = state.grads[k]
        m = state.m[k]
        v = state.v[k]
        p *= 1 - lr * wd
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def evaluate(state: ModelState, loader) -> dict:
    """MSE, MAE and (true, predicted) pairs over every batch of ``loader``."""
    ys, preds = [], []
    for batch in loader:
        preds.append(forward(state, batch).astype(np.float64))
        ys.append(np.asarray(batch.y, dtype=np.float64))
    if not ys:
        return {"mse": float("nan"), "mae": float("nan"), "y_true": np.zeros(0), "y_pred": np.zeros(0)}
    y = np.concatenate(ys)
    p = np.concatenate(preds)
    d = p - y
    return {"mse": float(np.mean(d * d)), "mae": float(np.mean(np.abs(d))), "y_true": y, "y_pred": p}


# -- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"GCKP"
CKPT_VERSION = 1


def save_checkpoint(path, state: ModelState, extra: dict | None = None) -> None:
    tensors = []
    blobs = []
    offset = 0
    for group, d in (("param", state.params), ("m", state.m), ("v", state.v)):
        for k, a in d.items():
            data = np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes()
            tensors.append({"group": group, "name": k, "dtype": a.dtype.newbyteorder("<").str,
                            "shape": list(a.shape), "offset": offset, "nbytes": len(data)})
            blobs.append(data)
            offset += len(data)
    header = json.dumps({"config": state.config.to_dict(), "delta": state.delta, "step": state.step,
                         "tensors": tensors, "extra": extra or {}}, sort_keys=True).encode()
    body = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(header)) + header + b"".join(blobs)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[ModelState, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ValueError(f"{path}: checkpoint checksum mismatch")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen])
    base = 12 + hlen
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "m": {}, "v": {}}
    for t in header["tensors"]:
        a = np.frombuffer(raw, dtype=t["dtype"], count=int(np.prod(t["shape"], dtype=np.int64)),
                          offset=base + t["offset"]).reshape(t["shape"])
        groups[t["group"]][t["name"]] = a.astype(a.dtype.newbyteorder("="))
    cfg = ModelConfig.from_dict(header["config"])
    zeros = {k: np.zeros_like(a) for k, a in groups["param"].items()}
    state = ModelState(cfg, groups["param"], header["delta"], zeros, groups["m"], groups["v"], header["step"])
    return state, header["extra"]
