"""Integer-only evaluation of a lookup-table network and model/netlist equivalence checks."""

from dataclasses import dataclass, field

import numpy as np

from .lutgen import code_dtype
from .quantization import dequantize, pack_codes, quantize, unpack_index
from .topology import layer_node_values, model_forward

CHECK_CHUNK = 1 << 14


class SimulationError(ValueError):
    """Raised for malformed input codes."""


@dataclass
class SimResult:
    outputs: np.ndarray
    latency_cycles: int
    trace: list = None  # codes after each layer, when requested


def simulate(lutnet, codes, keep_trace=False):
    """Propagate input codes through every table layer.

    ``codes`` is an integer array of shape ``(batch, input_dim)``. Each layer
    gathers its fan-in codes, packs them into table indices and looks them up.
    """
    h = np.asarray(codes)
    if h.ndim != 2 or h.shape[1] != lutnet.input_dim:
        raise SimulationError(f"expected codes of shape (n, {lutnet.input_dim}), got {h.shape}")
    if not np.issubdtype(h.dtype, np.integer):
        if not np.all(np.isfinite(h)) or not np.all(h == np.floor(h)):
            raise SimulationError("input codes must be integers")
        h = h.astype(np.int64)
    if h.size and (h.min() < 0 or h.max() >= 1 << lutnet.layers[0].in_bits):
        raise SimulationError(f"input codes must lie in [0, {1 << lutnet.layers[0].in_bits})")
    trace = []
    nodes = None
    for layer in lutnet.layers:
        idx = pack_codes(h[:, layer.connectivity], layer.in_bits)  # (batch, width)
        if nodes is None or len(nodes) != layer.width:
            nodes = np.arange(layer.width)
        h = layer.entries[nodes, idx].astype(np.int64)
        if keep_trace:
            trace.append(h)
    out = h.astype(code_dtype(lutnet.layers[-1].out_bits))
    return SimResult(out, lutnet.latency_cycles, trace if keep_trace else None)


def argmax_codes(codes):
    """Class with the largest unsigned code; ties go to the lowest index."""
    return np.argmax(np.asarray(codes, dtype=np.int64), axis=1)


def netlist_predict(lutnet, X):
    return argmax_codes(simulate(lutnet, lutnet.encode(X)).outputs)


@dataclass
class Mismatch:
    layer: int
    node: int
    index: int
    table: int
    model: int


@dataclass
class EquivalenceReport:
    nodes_checked: int = 0
    entries_checked: int = 0
    samples: int = 0
    node_mismatches: list = field(default_factory=list)
    sample_mismatches: int = 0
    prediction_agreement: float = float("nan")
    latency_cycles: int = 0

    @property
    def clean(self):
        return not self.node_mismatches and self.sample_mismatches == 0

    def to_text(self):
        status = "CLEAN" if self.clean else "MISMATCH"
        lines = [
            f"equivalence {status}: nodes={self.nodes_checked} entries={self.entries_checked} "
            f"node_mismatches={len(self.node_mismatches)} samples={self.samples} "
            f"sample_mismatches={self.sample_mismatches} "
            f"prediction_agreement={self.prediction_agreement:.6f} "
            f"latency_cycles={self.latency_cycles}"
        ]
        for m in self.node_mismatches:
            lines.append(f"mismatch layer={m.layer} node={m.node} index={m.index} "
                         f"table={m.table} model={m.model}")
        return "\n".join(lines) + "\n"


def _layer_reference_codes(model, layer_idx, indices):
    """Model-path output codes of every node in a layer for the given table indices.

    All nodes are evaluated together through the same batched layer routine
    that inference uses, rather than the per-node enumeration of ``lutgen``.
    """
    layer = model.layers[layer_idx]
    q_in = model.input_quantizer_of(layer_idx)
    x = dequantize(unpack_index(indices, q_in.bits, layer.spec.fan_in), q_in)
    gathered = np.broadcast_to(x, (layer.spec.width,) + x.shape)
    u = layer_node_values(layer, gathered, mode="eval")
    return quantize(u, layer.quantizer)[0].T  # (width, n_indices)


def check_equivalence(model, lutnet, n_samples=10_000, seed=0, X=None):
    """Compare a model against its converted netlist.

    Two checks are run: every table entry against the model's batched layer
    evaluation (exhaustive), and ``n_samples`` random inputs end to end at every
    layer boundary. Random inputs are drawn around the training distribution
    (mean and 1.5x std per feature) unless ``X`` is given.
    """
    report = EquivalenceReport(latency_cycles=lutnet.latency_cycles)
    for l, tlayer in enumerate(lutnet.layers):
        size = tlayer.entries.shape[1]
        for start in range(0, size, CHECK_CHUNK):
            idx = np.arange(start, min(size, start + CHECK_CHUNK), dtype=np.int64)
            ref = _layer_reference_codes(model, l, idx)
            got = tlayer.entries[:, start:start + len(idx)].astype(np.int64)
            for node, off in zip(*np.nonzero(ref != got)):
                report.node_mismatches.append(
                    Mismatch(l, int(node), int(idx[off]), int(got[node, off]), int(ref[node, off])))
        report.nodes_checked += tlayer.width
        report.entries_checked += tlayer.entries.size

    if X is None and n_samples:
        rng = np.random.default_rng([seed, 3])
        X = model.input_mean + 1.5 * model.input_std * rng.standard_normal((n_samples, model.input_dim))
    if X is not None and len(X):
        X = np.asarray(X)
        trace = model_forward(model, X, mode="eval")
        sim = simulate(lutnet, lutnet.encode(X), keep_trace=True)
        bad = np.zeros(len(X), dtype=bool)
        for ref, got in zip(trace.codes[1:], sim.trace):
            bad |= np.any(ref != got, axis=1)
        report.samples = len(X)
        report.sample_mismatches = int(bad.sum())
        report.prediction_agreement = float(np.mean(
            argmax_codes(trace.codes[-1]) == argmax_codes(sim.outputs)))
    return report
