"""Truth-table generation by exhaustive enumeration of each node's input codes.

For a node with fan-in ``F`` fed by ``b``-bit codes, every index in
``[0, 2**(b*F))`` is unpacked into ``F`` codes, dequantized, pushed through the
node's sub-network and its slice of the (frozen) batch norm, and quantized by
the layer's output quantizer. The raw output code is stored.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._container import pack_container, unpack_container
from .numerics import DTYPE, batchnorm_forward
from .quantization import Quantizer, dequantize, quantize, unpack_index
from .subnet import subnet_forward

CHUNK = 1 << 16
BUNDLE_MAGIC = b"NLUTTBLS"
BUNDLE_VERSION = 1


class TableSizeError(ValueError):
    """Raised when a table would exceed the configured size cap."""


def code_dtype(bits):
    if bits <= 8:
        return np.uint8
    if bits <= 16:
        return np.uint16
    raise TableSizeError(f"output codes of {bits} bits are not supported")


@dataclass(eq=False)
class TruthTable:
    fan_in: int
    in_bits: int
    out_bits: int
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=code_dtype(self.out_bits))
        if len(self.entries) != 1 << (self.in_bits * self.fan_in):
            raise TableSizeError(
                f"table has {len(self.entries)} entries, expected 2**{self.in_bits * self.fan_in}"
            )
        if self.entries.size and int(self.entries.max()) >= 1 << self.out_bits:
            raise ValueError(f"entry exceeds {self.out_bits}-bit range")

    @property
    def index_bits(self):
        return self.in_bits * self.fan_in

    def lookup(self, index):
        return self.entries[index]

    def __eq__(self, other):
        if not isinstance(other, TruthTable):
            return NotImplemented
        return (self.fan_in, self.in_bits, self.out_bits) == (other.fan_in, other.in_bits, other.out_bits) \
            and np.array_equal(self.entries, other.entries)

    def __repr__(self):
        return (f"TruthTable(fan_in={self.fan_in}, in_bits={self.in_bits}, "
                f"out_bits={self.out_bits}, entries=<{len(self.entries)}>)")


@dataclass(eq=False)
class LutLayer:
    connectivity: np.ndarray  # (width, fan_in)
    in_bits: int
    out_bits: int
    entries: np.ndarray  # (width, 2**(in_bits*fan_in)), one row per table

    @property
    def width(self):
        return self.connectivity.shape[0]

    @property
    def fan_in(self):
        return self.connectivity.shape[1]

    def table(self, node):
        return TruthTable(self.fan_in, self.in_bits, self.out_bits, self.entries[node])

    @property
    def tables(self):
        return [self.table(j) for j in range(self.width)]


@dataclass(eq=False)
class LutNetwork:
    input_dim: int
    input_quantizer: Quantizer
    layers: list
    input_mean: np.ndarray = None
    input_std: np.ndarray = None
    config: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.input_mean is None:
            self.input_mean = np.zeros(self.input_dim, dtype=DTYPE)
        if self.input_std is None:
            self.input_std = np.ones(self.input_dim, dtype=DTYPE)

    @property
    def n_classes(self):
        return self.layers[-1].width

    @property
    def latency_cycles(self):
        """One registered lookup stage per layer."""
        return len(self.layers)

    @property
    def n_tables(self):
        return sum(layer.width for layer in self.layers)

    def encode(self, X):
        """Raw features to input codes, identical to the model's host-side encoding."""
        x = (np.asarray(X, dtype=DTYPE) - self.input_mean) / self.input_std
        return quantize(x, self.input_quantizer)[0]

    def predict(self, X):
        from .netsim import netlist_predict

        return netlist_predict(self, X)


def _node_codes(model, layer_idx, node, indices):
    layer = model.layers[layer_idx]
    spec = layer.spec
    q_in = model.input_quantizer_of(layer_idx)
    x = dequantize(unpack_index(indices, q_in.bits, spec.fan_in), q_in)
    z = subnet_forward(spec.subnet, layer.node_params(node), x)
    u, _ = batchnorm_forward(z, layer.bn.slice(slice(node, node + 1)), mode="eval")
    return quantize(u[:, 0], layer.quantizer)[0]


def neuron_to_table(model, layer_idx, node, max_table_bits=None):
    """Enumerate every input combination of one node into a :class:`TruthTable`."""
    spec = model.layers[layer_idx].spec
    cap = max_table_bits or model.max_table_bits
    bits = spec.in_bits * spec.fan_in
    if bits > cap:
        raise TableSizeError(f"layer {layer_idx}: {bits}-bit index exceeds cap of {cap}")
    size = 1 << bits
    out = np.empty(size, dtype=code_dtype(spec.out_bits))
    for start in range(0, size, CHUNK):
        idx = np.arange(start, min(size, start + CHUNK), dtype=np.int64)
        out[start:start + len(idx)] = _node_codes(model, layer_idx, node, idx)
    return TruthTable(spec.fan_in, spec.in_bits, spec.out_bits, out)


def model_to_lutnetwork(model, threads=1):
    """Convert every node of ``model``. Results do not depend on ``threads``."""
    layers = []
    for l, layer in enumerate(model.layers):
        spec = layer.spec
        entries = np.empty((spec.width, 1 << spec.table_bits), dtype=code_dtype(spec.out_bits))

        def fill(node, l=l, entries=entries):
            entries[node] = neuron_to_table(model, l, node).entries

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(fill, range(spec.width)))
        else:
            for node in range(spec.width):
                fill(node)
        layers.append(LutLayer(layer.connectivity.copy(), spec.in_bits, spec.out_bits, entries))
    return LutNetwork(
        input_dim=model.input_dim,
        input_quantizer=Quantizer(model.input_quantizer.bits, model.input_quantizer.scale, True),
        layers=layers,
        input_mean=model.input_mean.copy(),
        input_std=model.input_std.copy(),
        config=model.config,
        seed=model.seed,
    )


# Table bundles use the container layout documented in neuralut._container.
# The header describes the network; arrays are ``input.mean``/``input.std``
# (<f8), ``layer{i}.connectivity`` (<i8, width x fan_in) and
# ``layer{i}.entries`` (<u1 or <u2, width x 2**(in_bits*fan_in)), so each table's
# raw codes are contiguous in node order.

def bundle_bytes(lutnet):
    q = lutnet.input_quantizer
    header = {
        "kind": "neuralut-tables",
        "config": lutnet.config,
        "seed": lutnet.seed,
        "input_dim": lutnet.input_dim,
        "input_quantizer": {"bits": q.bits, "scale": q.scale, "signed": q.signed},
        "layers": [{"width": L.width, "fan_in": L.fan_in, "in_bits": L.in_bits,
                    "out_bits": L.out_bits} for L in lutnet.layers],
    }
    arrays = {"input.mean": lutnet.input_mean, "input.std": lutnet.input_std}
    for i, L in enumerate(lutnet.layers):
        arrays[f"layer{i}.connectivity"] = L.connectivity.astype(np.int64)
        arrays[f"layer{i}.entries"] = L.entries
    return pack_container(BUNDLE_MAGIC, BUNDLE_VERSION, header, arrays)


def save_bundle(lutnet, path):
    with open(path, "wb") as f:
        f.write(bundle_bytes(lutnet))


def bundle_from_bytes(data):
    header, arrays = unpack_container(data, BUNDLE_MAGIC, BUNDLE_VERSION)
    layers = [
        LutLayer(arrays[f"layer{i}.connectivity"], meta["in_bits"], meta["out_bits"],
                 arrays[f"layer{i}.entries"].astype(code_dtype(meta["out_bits"])))
        for i, meta in enumerate(header["layers"])
    ]
    return LutNetwork(
        input_dim=header["input_dim"],
        input_quantizer=Quantizer(**header["input_quantizer"]),
        layers=layers,
        input_mean=arrays["input.mean"],
        input_std=arrays["input.std"],
        config=header["config"],
        seed=header["seed"],
    )


def load_bundle(path):
    with open(path, "rb") as f:
        return bundle_from_bytes(f.read())


def dump_text(lutnet):
    """Human-readable dump, one ``index -> code`` line per table entry."""
    lines = [f"# neuralut tables: input_dim={lutnet.input_dim} layers={len(lutnet.layers)}"]
    for i, L in enumerate(lutnet.layers):
        for j in range(L.width):
            conn = ",".join(str(int(c)) for c in L.connectivity[j])
            lines.append(f"# layer {i} node {j} fan_in={L.fan_in} in_bits={L.in_bits} "
                         f"out_bits={L.out_bits} sources={conn}")
            lines.extend(f"{k} -> {int(v)}" for k, v in enumerate(L.entries[j]))
    return "\n".join(lines) + "\n"
