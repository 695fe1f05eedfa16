"""Circuit-level model: sparse layers of sub-network nodes between quantized boundaries.

Data flows as::

    raw features -> standardize -> signed input quantizer
      -> for each layer: gather fan-in values -> sub-network per node
         -> batch norm over node outputs -> unsigned boundary quantizer

Logits are the dequantized outputs of the last layer. Every value crossing a
layer boundary is a multiple of that boundary's quantizer step, so each node is
a pure function of a small number of codes and can be tabulated.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from ._container import ContainerError, pack_container, unpack_container
from .numerics import (
    DTYPE,
    BatchNormState,
    DimensionError,
    batchnorm_backward,
    batchnorm_forward,
    softmax_cross_entropy,
)
from .quantization import Quantizer, fake_quantize, quantize, quantize_backward
from .subnet import SubnetConfig, SubnetParams, init_params, subnet_backward, subnet_forward

CheckpointError = ContainerError

DEFAULT_MAX_TABLE_BITS = 20
SCALE_PERCENTILE = 99.9
SCALE_CANDIDATES = 100
MIN_SCALE = 1e-6


class TopologyError(ValueError):
    """Raised for an invalid circuit-level configuration."""


@dataclass(frozen=True)
class LayerSpec:
    width: int
    fan_in: int
    in_bits: int
    out_bits: int
    subnet: SubnetConfig

    @property
    def table_bits(self):
        return self.fan_in * self.in_bits

    def to_dict(self):
        s = self.subnet
        return {
            "width": self.width, "fan_in": self.fan_in, "in_bits": self.in_bits,
            "out_bits": self.out_bits, "L": s.L, "N": s.N, "S": s.S,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["width"], d["fan_in"], d["in_bits"], d["out_bits"],
                   SubnetConfig(n_in=d["fan_in"], n_out=1, L=d["L"], N=d["N"], S=d["S"]))


@dataclass
class CircuitLayer:
    spec: LayerSpec
    connectivity: np.ndarray  # (width, fan_in) sorted source indices
    params: SubnetParams = None  # stacked over nodes on axis 0
    bn: BatchNormState = None
    quantizer: Quantizer = None

    def node_params(self, node):
        return self.params.select(node)


@dataclass
class CircuitModel:
    input_dim: int
    input_quantizer: Quantizer
    layers: list
    input_mean: np.ndarray = None
    input_std: np.ndarray = None
    config: dict = field(default_factory=dict)
    seed: int = 0
    max_table_bits: int = DEFAULT_MAX_TABLE_BITS

    def __post_init__(self):
        if self.input_mean is None:
            self.input_mean = np.zeros(self.input_dim, dtype=DTYPE)
        if self.input_std is None:
            self.input_std = np.ones(self.input_dim, dtype=DTYPE)

    @property
    def n_classes(self):
        return self.layers[-1].spec.width

    @property
    def depth(self):
        return len(self.layers)

    def input_quantizer_of(self, layer_idx):
        """Quantizer whose codes feed layer ``layer_idx``."""
        return self.input_quantizer if layer_idx == 0 else self.layers[layer_idx - 1].quantizer

    def standardize(self, X):
        return (np.asarray(X, dtype=DTYPE) - self.input_mean) / self.input_std

    def encode_inputs(self, X):
        """Raw features to input codes (host-side encoding)."""
        return quantize(self.standardize(X), self.input_quantizer)[0]

    def parameters(self):
        """Trainable arrays by name. Scale entries are copies; see :meth:`assign_scales`."""
        out = {"input.scale": np.array([self.input_quantizer.scale])}
        for l, layer in enumerate(self.layers):
            for name, arr in layer.params.named_arrays().items():
                out[f"layer{l}.{name}"] = arr
            out[f"layer{l}.bn.gamma"] = layer.bn.gamma
            out[f"layer{l}.bn.beta"] = layer.bn.beta_shift
            out[f"layer{l}.scale"] = np.array([layer.quantizer.scale])
        return out

    def assign_scales(self, params):
        self.input_quantizer.scale = max(float(params["input.scale"][0]), MIN_SCALE)
        for l, layer in enumerate(self.layers):
            layer.quantizer.scale = max(float(params[f"layer{l}.scale"][0]), MIN_SCALE)

    def copy(self):
        return copy.deepcopy(self)


def is_decayed(name):
    """Weight decay applies to sub-network weights and biases only."""
    return ".A" in name or ".R" in name


def resolve_layer_specs(model_cfg):
    """Per-layer specs from a model config section, applying per-layer exceptions."""
    widths = list(model_cfg["layers"])
    beta = model_cfg["beta"]
    fan_in = model_cfg["fan_in"]
    sub = model_cfg.get("subnet", {})
    exceptions = {int(k): v for k, v in model_cfg.get("exceptions", {}).items()}
    for k in exceptions:
        if not 0 <= k < len(widths):
            raise TopologyError(f"exception for layer {k} but the model has {len(widths)} layers")
    in_bits = [exceptions.get(i, {}).get("beta", beta) for i in range(len(widths))]
    specs = []
    for i, w in enumerate(widths):
        f = exceptions.get(i, {}).get("fan_in", fan_in)
        out_bits = in_bits[i + 1] if i + 1 < len(widths) else beta
        specs.append(LayerSpec(
            width=w, fan_in=f, in_bits=in_bits[i], out_bits=out_bits,
            subnet=SubnetConfig(n_in=f, n_out=1, L=sub.get("L", 1), N=sub.get("N", 1), S=sub.get("S", 0)),
        ))
    return specs


def sample_connectivity(source_width, width, fan_in, seed, layer_idx):
    """Random fan-in sets, one independent counter-keyed stream per node."""
    if fan_in > source_width:
        raise TopologyError(
            f"layer {layer_idx}: fan-in {fan_in} exceeds source width {source_width}"
        )
    conn = np.empty((width, fan_in), dtype=np.int64)
    for node in range(width):
        rng = np.random.default_rng([seed, 0, layer_idx, node])
        conn[node] = np.sort(rng.choice(source_width, size=fan_in, replace=False))
    return conn


def build_model(model_config, seed=0):
    """Build an untrained :class:`CircuitModel` from a model config section."""
    input_dim = model_config["input_dim"]
    cap = model_config.get("max_table_bits", DEFAULT_MAX_TABLE_BITS)
    specs = resolve_layer_specs(model_config)
    layers = []
    source = input_dim
    for l, spec in enumerate(specs):
        if spec.fan_in < 1 or spec.in_bits < 1:
            raise TopologyError(f"layer {l}: fan-in and bit-width must be >= 1")
        if spec.table_bits > cap:
            raise TopologyError(
                f"layer {l}: fan_in*in_bits = {spec.table_bits} exceeds max_table_bits={cap}"
            )
        conn = sample_connectivity(source, spec.width, spec.fan_in, seed, l)
        node_params = [init_params(spec.subnet, np.random.default_rng([seed, 1, l, n]))
                       for n in range(spec.width)]
        params = _stack_params(node_params)
        layers.append(CircuitLayer(
            spec=spec, connectivity=conn, params=params,
            bn=BatchNormState.create(spec.width),
            quantizer=Quantizer(spec.out_bits, 1.0, signed=False),
        ))
        source = spec.width
    return CircuitModel(
        input_dim=input_dim,
        input_quantizer=Quantizer(specs[0].in_bits, 1.0, signed=True),
        layers=layers,
        config=copy.deepcopy(dict(model_config)),
        seed=seed,
        max_table_bits=cap,
    )


def _stack_params(node_params):
    first = node_params[0]
    affines = [(np.stack([p.affines[i][0] for p in node_params]),
                np.stack([p.affines[i][1] for p in node_params]))
               for i in range(len(first.affines))]
    residuals = [(np.stack([p.residuals[i][0] for p in node_params]),
                  np.stack([p.residuals[i][1] for p in node_params]))
                 for i in range(len(first.residuals))]
    return SubnetParams(affines, residuals)


def gather(layer, h_prev):
    """Fan-in values per node: ``(batch, source)`` -> ``(width, batch, fan_in)``."""
    return np.ascontiguousarray(np.transpose(h_prev[:, layer.connectivity], (1, 0, 2)))


def calibrate_scale(values, q):
    """Scale for quantizer ``q`` minimizing the quantization error on ``values``.

    Candidates are fractions ``k / SCALE_CANDIDATES`` of the 99.9th percentile
    of the magnitudes, so rare outliers cannot stretch the range.
    """
    values = np.asarray(values, dtype=DTYPE).ravel()
    mag = np.abs(values) if q.signed else np.maximum(values, 0.0)
    top = float(np.percentile(mag, SCALE_PERCENTILE)) if mag.size else 0.0
    if top <= MIN_SCALE:
        return 1.0
    best_err, best = np.inf, top
    for k in range(1, SCALE_CANDIDATES + 1):
        c = Quantizer(q.bits, top * k / SCALE_CANDIDATES, q.signed)
        err = float(np.mean((quantize(values, c)[1] - values) ** 2))
        if err < best_err:
            best_err, best = err, c.scale
    return best


@dataclass
class LayerCache:
    gathered: np.ndarray
    subnet_cache: list
    bn_cache: object
    pre_quant: np.ndarray


@dataclass
class ForwardTrace:
    logits: np.ndarray
    codes: list  # input codes followed by each layer's output codes
    input_pre_quant: np.ndarray = None
    caches: list = field(default_factory=list)

    def pattern(self, model):
        """Boolean signature of every ReLU and clip decision taken in this pass.

        Requires a pass run with ``keep_cache``.
        """
        parts = []
        quantizers = [model.input_quantizer] + [layer.quantizer for layer in model.layers]
        pre = [self.input_pre_quant] + [c.pre_quant for c in self.caches]
        for q, u in zip(quantizers, pre):
            lo, hi = q.bounds()
            parts += [u < lo, u > hi]
        for c in self.caches:
            for entry in c.subnet_cache:
                if len(entry) == 2:
                    parts.append(entry[1] > 0)
                else:
                    parts.append(entry[2] > 0)
                    parts.extend(z > 0 for _, z in entry[1])
        return np.concatenate([p.ravel() for p in parts]) if parts else np.zeros(0, bool)


def layer_node_values(layer, gathered, mode="eval", update=True, return_cache=False):
    """Sub-network and batch norm for all nodes of a layer. Returns pre-quantizer values."""
    sub = layer.spec.subnet
    out, scache = subnet_forward(sub, layer.params, gathered, return_cache=True)
    z = out[..., 0].T  # (batch, width)
    u, bcache = batchnorm_forward(z, layer.bn, mode=mode, update=update)
    if return_cache:
        return u, scache, bcache
    return u


def model_forward(model, X, mode="eval", surrogate=False, init_scales=False,
                  update_stats=True, keep_cache=False):
    """Run the circuit model on raw features ``X`` and return a :class:`ForwardTrace`.

    With ``surrogate`` the rounding step of every quantizer is dropped (clip
    only). With ``init_scales`` each quantizer scale is set from the
    activations reaching it before it is applied.
    """
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionError(f"expected input of shape (n, {model.input_dim}), got {X.shape}")
    x = model.standardize(X)
    q = model.input_quantizer
    if init_scales:
        q.scale = calibrate_scale(x, q)
    codes = [] if surrogate else [quantize(x, q)[0]]
    h = fake_quantize(x, q, surrogate)
    trace = ForwardTrace(logits=None, codes=codes, input_pre_quant=x if keep_cache else None)
    for layer in model.layers:
        g = gather(layer, h)
        u, scache, bcache = layer_node_values(layer, g, mode=mode, update=update_stats,
                                              return_cache=True)
        q = layer.quantizer
        if init_scales:
            q.scale = calibrate_scale(u, q)
        if surrogate:
            h = fake_quantize(u, q, surrogate=True)
        else:
            c, h = quantize(u, q)
            codes.append(c)
        if keep_cache:
            trace.caches.append(LayerCache(g, scache, bcache, u))
    trace.logits = h
    return trace


def model_loss(model, X, labels, mode="train", surrogate=False, update_stats=True):
    trace = model_forward(model, X, mode=mode, surrogate=surrogate, update_stats=update_stats)
    return softmax_cross_entropy(trace.logits, labels)[0]


def model_backward(model, X, labels, surrogate=False, mode="train", update_stats=True,
                   init_scales=False, d_logits=None):
    """Loss and gradients for every trainable array, keyed as in ``model.parameters()``.

    Uses the straight-through estimator at every quantizer. Returns
    ``(loss, grads, trace)``.
    """
    trace = model_forward(model, X, mode=mode, surrogate=surrogate, init_scales=init_scales,
                          update_stats=update_stats, keep_cache=True)
    loss, d = softmax_cross_entropy(trace.logits, labels)
    if d_logits is not None:
        d = np.asarray(d_logits, dtype=DTYPE)
    grads = {}
    for l in reversed(range(model.depth)):
        layer = model.layers[l]
        cache = trace.caches[l]
        dU, grads[f"layer{l}.scale"] = quantize_backward(cache.pre_quant, layer.quantizer, d)
        grads[f"layer{l}.scale"] = np.array([grads[f"layer{l}.scale"]])
        dZ, dgamma, dbeta = batchnorm_backward(cache.bn_cache, dU, mode=mode)
        grads[f"layer{l}.bn.gamma"] = dgamma
        grads[f"layer{l}.bn.beta"] = dbeta
        d_sub = dZ.T[..., None]  # (width, batch, 1)
        sgrads, dG = subnet_backward(layer.spec.subnet, layer.params, cache.gathered, d_sub,
                                     cache=cache.subnet_cache)
        for name, arr in sgrads.named_arrays().items():
            grads[f"layer{l}.{name}"] = arr
        n, width = dZ.shape
        source = model.input_dim if l == 0 else model.layers[l - 1].spec.width
        d = np.zeros((n, source), dtype=DTYPE)
        cols = np.broadcast_to(layer.connectivity, (n,) + layer.connectivity.shape)
        rows = np.broadcast_to(np.arange(n)[:, None, None], cols.shape)
        np.add.at(d, (rows, cols), np.transpose(dG, (1, 0, 2)))
    _, ds = quantize_backward(trace.input_pre_quant, model.input_quantizer, d)
    grads["input.scale"] = np.array([ds])
    ordered = {k: grads[k] for k in model.parameters()}
    return loss, ordered, trace


def predict(model, X):
    """Class indices; ties go to the lowest index."""
    return np.argmax(model_forward(model, X, mode="eval").codes[-1], axis=1)


def predict_logits(model, X):
    return model_forward(model, X, mode="eval").logits


# Checkpoints use the container layout documented in neuralut._container.
CHECKPOINT_MAGIC = b"NLUTCKPT"
CHECKPOINT_VERSION = 1


def _model_arrays(model):
    arrays = {"input.mean": model.input_mean, "input.std": model.input_std}
    for l, layer in enumerate(model.layers):
        arrays[f"layer{l}.connectivity"] = layer.connectivity
        for name, arr in layer.params.named_arrays().items():
            arrays[f"layer{l}.{name}"] = arr
        arrays[f"layer{l}.bn.gamma"] = layer.bn.gamma
        arrays[f"layer{l}.bn.beta"] = layer.bn.beta_shift
        arrays[f"layer{l}.bn.running_mean"] = layer.bn.running_mean
        arrays[f"layer{l}.bn.running_var"] = layer.bn.running_var
    return arrays


def checkpoint_bytes(model):
    header = {
        "kind": "neuralut-checkpoint",
        "config": model.config,
        "seed": model.seed,
        "input_dim": model.input_dim,
        "max_table_bits": model.max_table_bits,
        "input_quantizer": _quantizer_dict(model.input_quantizer),
        "layers": [
            {"spec": layer.spec.to_dict(),
             "quantizer": _quantizer_dict(layer.quantizer),
             "bn": {"momentum": layer.bn.momentum, "epsilon": layer.bn.epsilon}}
            for layer in model.layers
        ],
    }
    return pack_container(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, _model_arrays(model))


def save_checkpoint(model, path):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    return checkpoint_from_bytes(data)


def checkpoint_from_bytes(data):
    header, arrays = unpack_container(data, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    layers = []
    for l, meta in enumerate(header["layers"]):
        spec = LayerSpec.from_dict(meta["spec"])
        p = f"layer{l}."
        params = SubnetParams(
            [(arrays[f"{p}A{i}.W"], arrays[f"{p}A{i}.b"]) for i in range(spec.subnet.L)],
            [(arrays[f"{p}R{i}.W"], arrays[f"{p}R{i}.b"]) for i in range(spec.subnet.n_chunks)],
        )
        bn = BatchNormState(arrays[p + "bn.gamma"], arrays[p + "bn.beta"],
                            arrays[p + "bn.running_mean"], arrays[p + "bn.running_var"],
                            meta["bn"]["momentum"], meta["bn"]["epsilon"])
        layers.append(CircuitLayer(spec, arrays[p + "connectivity"], params, bn,
                                   Quantizer(**meta["quantizer"])))
    return CircuitModel(
        input_dim=header["input_dim"],
        input_quantizer=Quantizer(**header["input_quantizer"]),
        layers=layers,
        input_mean=arrays["input.mean"],
        input_std=arrays["input.std"],
        config=header["config"],
        seed=header["seed"],
        max_table_bits=header["max_table_bits"],
    )


def _quantizer_dict(q):
    return {"bits": q.bits, "scale": q.scale, "signed": q.signed}
