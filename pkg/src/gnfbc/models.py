"""Backbone layers, their graph-agnostic twins, and per-layer feedback blending.

Every layer first applies its weights and then aggregates over the graph.
The agnostic twin is the same layer with the adjacency replaced by the
identity, so it reuses the transformed features and costs no extra matmul.
One parameter set serves both paths.
"""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, FormatError, GnfbcError

KINDS = ("gcn", "sgc", "sage", "gat", "linear")
PATHS = ("gnfbc", "aware", "agnostic")
GAT_SLOPE = 0.2
MAGIC = b"GNFBC1"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    activation: str = "relu"
    hops: int = 2
    slope: float = GAT_SLOPE

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GnfbcError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise GnfbcError(f"layer dims must be positive, got {self.in_dim}->{self.out_dim}")
        if self.kind == "sgc" and self.hops < 1:
            raise GnfbcError("SGC needs at least one hop")
        if self.activation not in ("relu", "none"):
            raise GnfbcError(f"unknown activation {self.activation!r}")
        if not 0.0 < self.slope < 1.0:
            raise GnfbcError("leaky-relu slope must lie in (0, 1)")

    def tensor_shapes(self):
        if self.kind == "sage":
            return [("w_self", (self.in_dim, self.out_dim)), ("w_neigh", (self.in_dim, self.out_dim))]
        if self.kind == "gat":
            return [("w", (self.in_dim, self.out_dim)), ("att", (2 * self.out_dim, 1))]
        return [("w", (self.in_dim, self.out_dim))]


def init_params(spec, rng):
    return {
        name: ad.parameter(ad.xavier_init(rng, *shape), name=name)
        for name, shape in spec.tensor_shapes()
    }


def _check_input(spec, h):
    if h.shape[1] != spec.in_dim:
        raise DimensionError(f"{spec.kind} layer expects {spec.in_dim} input columns, got {h.shape[1]}")


def _transform(spec, params, h):
    _check_input(spec, h)
    if spec.kind == "sage":
        return ad.matmul(h, params["w_self"]), ad.matmul(h, params["w_neigh"])
    return ad.matmul(h, params["w"])


def gat_attention(spec, params, z, g):
    """Attention over N(i) plus i, one entry per stored entry of ``g.with_self_loops``."""
    struct_ = g.with_self_loops
    scores = ad.leaky_relu(ad.edge_scores(struct_, z, params["att"]), spec.slope)
    return ad.segment_softmax(struct_, scores)


def _aggregate(spec, params, z, g):
    if spec.kind == "gcn":
        return ad.spmm(g.normalized, z)
    if spec.kind == "sgc":
        for _ in range(spec.hops):
            z = ad.spmm(g.normalized, z)
        return z
    if spec.kind == "sage":
        z_self, z_neigh = z
        return ad.add(z_self, ad.spmm(g.mean_operator, z_neigh))
    if spec.kind == "gat":
        alpha = gat_attention(spec, params, z, g)
        return ad.edge_spmm(g.with_self_loops, alpha, z)
    return z


def _identity_aggregate(spec, z):
    if spec.kind == "sage":
        z_self, z_neigh = z
        return ad.add(z_self, z_neigh)
    return z


def _act(spec, x):
    return ad.activate(x, "none" if spec.kind == "sgc" else spec.activation)


def forward_aware(spec, params, h, g):
    return _act(spec, _aggregate(spec, params, _transform(spec, params, h), g))


def forward_agnostic(spec, params, h):
    return _act(spec, _identity_aggregate(spec, _transform(spec, params, h)))


def forward_pair(spec, params, h, g):
    """Aware and agnostic outputs of one layer from a single shared transform."""
    z = _transform(spec, params, h)
    aware = _act(spec, _aggregate(spec, params, z, g))
    agnostic = _act(spec, _identity_aggregate(spec, z))
    return aware, agnostic


def corrected_layer(spec, params, h, g, beta):
    """Blend of the activated aware and agnostic outputs, fused into one op."""
    z = _transform(spec, params, h)
    act = "none" if spec.kind == "sgc" else spec.activation
    return ad.blend_activate(_aggregate(spec, params, z, g), _identity_aggregate(spec, z), beta, act)


def residual(aware, agnostic):
    return ad.sub(aware, agnostic)


def apply_correction(aware, agnostic, beta):
    """Row i: aware_i - beta_i * (aware_i - agnostic_i)."""
    return ad.row_blend(aware, agnostic, beta)


class ModelStack:
    """Layers with one shared parameter set and a per-node feedback vector."""

    def __init__(self, layers, params, beta=None):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        self.layers = list(layers)
        self.params = list(params)
        self.beta = None if beta is None else np.asarray(beta, dtype=np.float64)

    @property
    def n_classes(self):
        return self.layers[-1].out_dim

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def backbone(self):
        return self.layers[0].kind

    def parameters(self):
        return [p for layer in self.params for _, p in sorted(layer.items())]

    def named_tensors(self):
        for i, (spec, params) in enumerate(zip(self.layers, self.params)):
            for name, _ in spec.tensor_shapes():
                yield f"layer{i}.{name}", params[name]

    def logits(self, x, g=None, path="aware", beta=None):
        if path not in PATHS:
            raise GnfbcError(f"unknown forward path {path!r}")
        h = ad.constant(x)
        if h.shape[1] != self.in_dim:
            raise DimensionError(f"model expects {self.in_dim} features, got {h.shape[1]}")
        if path == "gnfbc":
            beta = self.beta if beta is None else np.asarray(beta, dtype=np.float64)
            if beta is None:
                raise GnfbcError("gnfbc forward needs a beta vector")
            if len(beta) != h.shape[0]:
                raise DimensionError(f"beta has length {len(beta)}, expected {h.shape[0]}")
        for spec, params in zip(self.layers, self.params):
            if path == "aware":
                h = forward_aware(spec, params, h, g)
            elif path == "agnostic":
                h = forward_agnostic(spec, params, h)
            else:
                h = corrected_layer(spec, params, h, g, beta)
        return h

    def forward(self, x, g=None, path="aware", beta=None):
        return ad.softmax_rows(self.logits(x, g, path, beta))

    def state(self):
        return [{k: v.data.copy() for k, v in layer.items()} for layer in self.params]

    def load_state(self, state):
        for layer, saved in zip(self.params, state):
            for k, v in saved.items():
                layer[k].data[...] = v


def layer_specs(kind, dims, hops=2, slope=GAT_SLOPE):
    """Specs for a backbone running through ``dims`` = [features, hidden..., classes]."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise GnfbcError("need at least input and output dims")
    if kind == "sgc" and len(dims) != 2:
        raise GnfbcError("SGC is a single propagation-plus-linear stage; pass [features, classes]")
    last = len(dims) - 2
    return [
        LayerSpec(kind, dims[i], dims[i + 1], "none" if i == last else "relu", hops, slope)
        for i in range(len(dims) - 1)
    ]


def build_stack(kind, dims, rng, hops=2, beta=None):
    specs = layer_specs(kind, dims, hops)
    return ModelStack(specs, [init_params(s, rng) for s in specs], beta)


def forward_gnfbc(stack, x, g, beta=None):
    """Corrected forward: blend aware and agnostic outputs at every layer, then softmax."""
    return stack.forward(x, g, "gnfbc", beta)


# -- weights file ------------------------------------------------------------------


def save_weights(path, stack, inference="aware"):
    """Write ``MAGIC``, a length-prefixed JSON header, then float64 tensors in order."""
    header = {
        "format": 1,
        "inference": inference,
        "layer_count": len(stack.layers),
        "layers": [asdict(s) for s in stack.layers],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, value in stack.named_tensors():
            f.write(np.ascontiguousarray(value.data, dtype="<f8").tobytes())


def load_weights(path):
    """Returns (stack, header)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a weights file (bad magic {raw[:len(MAGIC)]!r})")
    off = len(MAGIC)
    try:
        (size,) = struct.unpack_from("<I", raw, off)
        header = json.loads(raw[off + 4 : off + 4 + size])
        specs = [LayerSpec(**layer) for layer in header["layers"]]
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    if header.get("layer_count") != len(specs):
        raise FormatError(f"{path}: layer count does not match header")
    off += 4 + size
    params = []
    for spec in specs:
        layer = {}
        for name, shape in spec.tensor_shapes():
            count = shape[0] * shape[1]
            if off + 8 * count > len(raw):
                raise FormatError(f"{path}: truncated tensor data")
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
            layer[name] = ad.parameter(arr.astype(np.float64), name=name)
            off += 8 * count
        params.append(layer)
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return ModelStack(specs, params), header
