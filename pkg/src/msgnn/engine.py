"""Minimal GNN engine: GCN/GIN stacks, losses, exact reverse-mode gradients.

Everything is float64.  The forward pass records the intermediates needed
for the hand-written backward pass and increments a multiply-count FLOP
counter (the two matrix products of the propagation rule; activations and
adjacency normalization are excluded from the count).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphs import GraphData, LabelVector, SparseGraph, gcn_layer_flops


class EngineError(ValueError):
    """Raised on shape mismatches or invalid engine usage."""


@dataclass
class GCNLayer:
    """H' = op(A) · H · W + b, with op the raw or normalized adjacency."""

    W: np.ndarray
    b: np.ndarray

    kind = "gcn"

    @property
    def c_in(self) -> int:
        return self.W.shape[0]

    @property
    def c_out(self) -> int:
        return self.W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


@dataclass
class GINLayer:
    """H' = mlp((1 + eps)·H + A·H) with one hidden relu layer, raw adjacency."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    eps: float = 0.0

    kind = "gin"

    @property
    def c_in(self) -> int:
        return self.W1.shape[0]

    @property
    def c_hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def c_out(self) -> int:
        return self.W2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


Layer = GCNLayer | GINLayer


@dataclass
class Model:
    """A stack of layers with relu between them and none after the last.

    Weight shapes depend only on channel counts, so one model runs on every
    scale of a hierarchy unchanged.
    """

    layers: list[Layer]
    normalize_adjacency: bool = True

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.c_out != nxt.c_in:
                raise EngineError(
                    f"layer channel mismatch: {prev.c_out} -> {nxt.c_in}"
                )

    @property
    def c_in(self) -> int:
        return self.layers[0].c_in

    @property
    def c_out(self) -> int:
        return self.layers[-1].c_out

    def params(self) -> list[dict[str, np.ndarray]]:
        return [layer.params() for layer in self.layers]

    def copy(self) -> "Model":
        out = []
        for layer in self.layers:
            if layer.kind == "gcn":
                out.append(GCNLayer(layer.W.copy(), layer.b.copy()))
            else:
                out.append(
                    GINLayer(
                        layer.W1.copy(), layer.b1.copy(),
                        layer.W2.copy(), layer.b2.copy(), layer.eps,
                    )
                )
        return Model(out, self.normalize_adjacency)


def _glorot(rng: np.random.Generator, c_in: int, c_out: int) -> np.ndarray:
    scale = np.sqrt(6.0 / (c_in + c_out))
    return rng.uniform(-scale, scale, size=(c_in, c_out))


def init_model(
    kind: str,
    channels: list[int],
    rng: np.random.Generator,
    normalize_adjacency: bool = True,
    gin_eps: float = 0.0,
) -> Model:
    """Glorot-initialized model; channels chains input -> hidden... -> classes."""
    if len(channels) < 2:
        raise EngineError("need at least input and output channel counts")
    layers: list[Layer] = []
    for c_in, c_out in zip(channels, channels[1:]):
        if kind == "gcn":
            layers.append(GCNLayer(_glorot(rng, c_in, c_out), np.zeros(c_out)))
        elif kind == "gin":
            hidden = c_out
            layers.append(
                GINLayer(
                    _glorot(rng, c_in, hidden), np.zeros(hidden),
                    _glorot(rng, hidden, c_out), np.zeros(c_out), gin_eps,
                )
            )
        else:
            raise EngineError(f"unknown layer kind {kind!r}")
    return Model(layers, normalize_adjacency)


class FlopCounter:
    """Accumulates forward multiply counts."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def gin_layer_flops(num_edges: int, num_nodes: int, c_in: int, c_hidden: int,
                    c_out: int) -> int:
    """Multiply count of one GIN layer: aggregation plus the two MLP products."""
    return (
        2 * num_edges * c_in
        + num_nodes * c_in * c_hidden
        + num_nodes * c_hidden * c_out
    )


def model_flops_per_pass(model: Model, g: SparseGraph) -> int:
    """Forward multiply count of one full pass on g."""
    e, n = g.num_undirected_edges, g.num_nodes
    total = 0
    for layer in model.layers:
        if layer.kind == "gcn":
            total += gcn_layer_flops(e, n, layer.c_in, layer.c_out)
        else:
            total += gin_layer_flops(e, n, layer.c_in, layer.c_hidden, layer.c_out)
    return total


@dataclass
class Tape:
    """Intermediates of one forward pass, consumed by backward()."""

    model: Model
    graph: SparseGraph
    op: object  # scipy CSR used by GCN layers
    caches: list[dict]
    logits: np.ndarray


def forward(
    model: Model,
    g: SparseGraph,
    x: np.ndarray,
    counter: FlopCounter | None = None,
) -> tuple[np.ndarray, Tape]:
    """Run the stack on (g, x); returns logits (n × classes) and the tape."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != g.num_nodes:
        raise EngineError(f"feature shape {x.shape} does not match graph")
    if x.shape[1] != model.c_in:
        raise EngineError(
            f"feature channels {x.shape[1]} != first layer input {model.c_in}"
        )
    op = g.normalized_csr if model.normalize_adjacency else g.csr
    raw = g.csr
    h = x
    caches = []
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        if layer.kind == "gcn":
            p = op @ h
            z = p @ layer.W + layer.b
            caches.append({"kind": "gcn", "p": p, "z": z})
        else:
            s = (1.0 + layer.eps) * h + raw @ h
            u = s @ layer.W1 + layer.b1
            v = np.maximum(u, 0.0)
            z = v @ layer.W2 + layer.b2
            caches.append({"kind": "gin", "s": s, "u": u, "v": v, "z": z})
        h = np.maximum(z, 0.0) if i < last else z
        if counter is not None:
            if layer.kind == "gcn":
                counter.add(
                    gcn_layer_flops(
                        g.num_undirected_edges, g.num_nodes, layer.c_in, layer.c_out
                    )
                )
            else:
                counter.add(
                    gin_layer_flops(
                        g.num_undirected_edges, g.num_nodes,
                        layer.c_in, layer.c_hidden, layer.c_out,
                    )
                )
    return h, Tape(model, g, op, caches, h)


Gradients = list[dict[str, np.ndarray]]


def zero_gradients(model: Model) -> Gradients:
    return [
        {name: np.zeros_like(arr) for name, arr in layer.params().items()}
        for layer in model.layers
    ]


def backward(tape: Tape, dlogits: np.ndarray) -> Gradients:
    """Exact reverse-mode gradients of a scalar loss seeded by d(loss)/d(logits)."""
    model = tape.model
    if dlogits.shape != tape.logits.shape:
        raise EngineError("loss-head gradient shape does not match logits")
    grads: Gradients = [None] * len(model.layers)
    raw = tape.graph.csr
    dh = dlogits
    last = len(model.layers) - 1
    for i in range(last, -1, -1):
        layer, cache = model.layers[i], tape.caches[i]
        dz = dh if i == last else dh * (cache["z"] > 0.0)
        if layer.kind == "gcn":
            grads[i] = {"W": cache["p"].T @ dz, "b": dz.sum(axis=0)}
            if i > 0:
                # op is symmetric, so op^T = op
                dh = tape.op @ (dz @ layer.W.T)
        else:
            dv = dz @ layer.W2.T
            du = dv * (cache["u"] > 0.0)
            grads[i] = {
                "W1": cache["s"].T @ du,
                "b1": du.sum(axis=0),
                "W2": cache["v"].T @ dz,
                "b2": dz.sum(axis=0),
            }
            if i > 0:
                ds = du @ layer.W1.T
                dh = (1.0 + layer.eps) * ds + raw @ ds
    return grads


def accumulate(into: Gradients, grads: Gradients, coef: float = 1.0) -> Gradients:
    for acc, g in zip(into, grads):
        for name in acc:
            acc[name] += coef * g[name]
    return into


def nll_loss(logits: np.ndarray, y: LabelVector, mask: np.ndarray) -> float:
    """Mean negative log-softmax of the true class over masked nodes."""
    loss, _ = nll_loss_with_grad(logits, y, mask, need_grad=False)
    return loss


def nll_loss_with_grad(
    logits: np.ndarray,
    y: LabelVector,
    mask: np.ndarray,
    need_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    mask = np.asarray(mask, dtype=bool)
    m = int(mask.sum())
    if m == 0:
        raise EngineError("loss mask is empty")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    picked = log_probs[np.arange(logits.shape[0]), y.labels]
    loss = float(-picked[mask].mean())
    if not need_grad:
        return loss, None
    dlogits = np.exp(log_probs)
    dlogits[np.arange(logits.shape[0]), y.labels] -= 1.0
    dlogits[~mask] = 0.0
    dlogits /= m
    return loss, dlogits


def ls_loss_with_grad(
    logits: np.ndarray, targets: np.ndarray, need_grad: bool = True
) -> tuple[float, np.ndarray | None]:
    """(1/2N)·||logits − targets||²_F with N the number of rows."""
    n = logits.shape[0]
    resid = logits - targets
    loss = float(0.5 / n * np.sum(resid * resid))
    if not need_grad:
        return loss, None
    return loss, resid / n


def least_squares_loss(
    g: SparseGraph, x: np.ndarray, theta: np.ndarray, y: np.ndarray
) -> float:
    """(1/2N)·||A·X·theta − Y||²_F for a single linear map (identity activation)."""
    pred = g.csr @ (np.asarray(x, dtype=np.float64) @ theta)
    loss, _ = ls_loss_with_grad(pred, np.asarray(y, dtype=np.float64), need_grad=False)
    return loss


@dataclass
class OptimizerState:
    """Adam moments and step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Gradients | None = None
    v: Gradients | None = None


def adam_step(state: OptimizerState, model: Model, grads: Gradients) -> None:
    """Standard Adam with bias correction; updates weights in place."""
    if state.m is None:
        state.m = zero_gradients(model)
        state.v = zero_gradients(model)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for layer, g, m, v in zip(model.layers, grads, state.m, state.v):
        params = layer.params()
        for name, p in params.items():
            if g[name].shape != p.shape:
                raise EngineError(f"gradient shape mismatch for {name}")
            m[name] = b1 * m[name] + (1.0 - b1) * g[name]
            v[name] = b2 * v[name] + (1.0 - b2) * g[name] ** 2
            p -= state.lr * (m[name] / bc1) / (np.sqrt(v[name] / bc2) + state.eps)


def flatten_weights(model: Model) -> np.ndarray:
    return np.concatenate(
        [arr.ravel() for layer in model.params() for arr in layer.values()]
    )


def set_weights_flat(model: Model, flat: np.ndarray) -> None:
    offset = 0
    for layer in model.params():
        for arr in layer.values():
            size = arr.size
            arr[...] = flat[offset : offset + size].reshape(arr.shape)
            offset += size
    if offset != flat.size:
        raise EngineError("flat weight vector size mismatch")


def save_weights(model: Model, prefix) -> None:
    """Write <prefix>.bin (little-endian float64) and <prefix>.json manifest."""
    prefix = Path(prefix)
    flat = flatten_weights(model).astype("<f8")
    flat.tofile(prefix.with_suffix(".bin"))
    layers = []
    offset = 0
    for layer in model.layers:
        entry = {"kind": layer.kind, "params": []}
        if layer.kind == "gin":
            entry["eps"] = layer.eps
        for name, arr in layer.params().items():
            entry["params"].append(
                {"name": name, "shape": list(arr.shape), "offset": offset}
            )
            offset += arr.size
        layers.append(entry)
    manifest = {
        "dtype": "<f8",
        "total": int(flat.size),
        "normalize_adjacency": model.normalize_adjacency,
        "layers": layers,
    }
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))


def load_weights(prefix) -> Model:
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    flat = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8")
    if flat.size != manifest["total"]:
        raise EngineError("weight file size does not match manifest")
    layers: list[Layer] = []
    for entry in manifest["layers"]:
        arrays = {}
        for p in entry["params"]:
            size = int(np.prod(p["shape"])) if p["shape"] else 1
            arrays[p["name"]] = (
                flat[p["offset"] : p["offset"] + size].reshape(p["shape"]).copy()
            )
        if entry["kind"] == "gcn":
            layers.append(GCNLayer(arrays["W"], arrays["b"]))
        else:
            layers.append(
                GINLayer(
                    arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"],
                    entry.get("eps", 0.0),
                )
            )
    return Model(layers, manifest["normalize_adjacency"])
