"""Verilog emission of a lookup-table network, plus a parser for emitted ROMs.

Naming scheme:

* ``layer{i}_n{j}`` -- ROM for node ``j`` of layer ``i``; ports ``clk``,
  ``M0`` (packed fan-in codes) and the registered output ``M1``.
* ``layer{i}`` -- one layer; ``M0`` is the previous layer's output bus,
  ``M1`` this layer's output bus.
* ``top`` -- the chained pipeline; ``M0`` carries ``input_dim`` input codes and
  ``M1`` the class output codes.

Bus layout: value ``k`` of a bus of ``b``-bit codes occupies bits
``[(k+1)*b-1 : k*b]``. Inside a ROM address, connection 0 is the most
significant group, matching the table index packing.
"""

import json
import os
import re
from dataclasses import dataclass

from .lutgen import TruthTable

ROM_TAG = "// neuralut-rom"


class RTLParseError(ValueError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


def neuron_name(layer_idx, node_idx):
    return f"layer{layer_idx}_n{node_idx}"


def _bin(value, width):
    return f"{width}'b{int(value):0{width}b}"


def _range(hi, lo):
    return f"[{hi}:{lo}]"


def emit_neuron(table, layer_idx, node_idx):
    """ROM module with a full case statement and registered output."""
    name = neuron_name(layer_idx, node_idx)
    iw = table.index_bits
    ow = table.out_bits
    lines = [
        f"{ROM_TAG} name={name} fan_in={table.fan_in} in_bits={table.in_bits} out_bits={ow}",
        f"// M0[{iw - 1}:0]: connection k occupies M0[{iw - 1}-{table.in_bits}*k -: {table.in_bits}]"
        " (connection 0 most significant)",
        f"module {name} (",
        "    input clk,",
        f"    input {_range(iw - 1, 0)} M0,",
        f"    output reg {_range(ow - 1, 0)} M1",
        ");",
        "    always @(posedge clk) begin",
        "        case (M0)",
    ]
    lines.extend(f"            {_bin(i, iw)}: M1 <= {_bin(v, ow)};" for i, v in enumerate(table.entries))
    lines += ["        endcase", "    end", "endmodule", ""]
    return "\n".join(lines)


def node_input_expr(connectivity_row, in_bits, bus="M0"):
    """Concatenation selecting each connected source's code, in connection order."""
    parts = [f"{bus}{_range((int(s) + 1) * in_bits - 1, int(s) * in_bits)}" for s in connectivity_row]
    return parts[0] if len(parts) == 1 else "{" + ", ".join(parts) + "}"


def emit_layer(layer, layer_idx, source_width):
    """Layer module wiring every node ROM to the previous layer's output bus.

    ``layer`` is a :class:`neuralut.lutgen.LutLayer`; the returned text also
    contains the node ROM modules, so one file holds one whole layer.
    """
    in_w = source_width * layer.in_bits
    out_w = layer.width * layer.out_bits
    lines = [
        f"// layer{layer_idx}: {layer.width} L-LUTs, fan_in={layer.fan_in}, "
        f"in_bits={layer.in_bits}, out_bits={layer.out_bits}",
        f"// M0: {source_width} codes of {layer.in_bits} bits; code k at M0[{layer.in_bits}*k +: {layer.in_bits}]",
        f"// M1: {layer.width} codes of {layer.out_bits} bits; node j at M1[{layer.out_bits}*j +: {layer.out_bits}]",
        f"module layer{layer_idx} (",
        "    input clk,",
        f"    input {_range(in_w - 1, 0)} M0,",
        f"    output {_range(out_w - 1, 0)} M1",
        ");",
    ]
    fw = layer.fan_in * layer.in_bits
    for j in range(layer.width):
        lines.append(f"    wire {_range(fw - 1, 0)} n{j}_M0 = "
                     f"{node_input_expr(layer.connectivity[j], layer.in_bits)};")
    for j in range(layer.width):
        ob = layer.out_bits
        lines.append(f"    {neuron_name(layer_idx, j)} u{j} (.clk(clk), .M0(n{j}_M0), "
                     f".M1(M1{_range((j + 1) * ob - 1, j * ob)}));")
    lines += ["endmodule", ""]
    roms = [emit_neuron(layer.table(j), layer_idx, j) for j in range(layer.width)]
    return "\n".join(lines) + "\n" + "\n".join(roms)


def emit_top(lutnet):
    """All files for a network as ``{filename: text}``, including ``manifest.txt``."""
    files = {}
    source = lutnet.input_dim
    for i, layer in enumerate(lutnet.layers):
        files[f"layer{i}.v"] = emit_layer(layer, i, source)
        source = layer.width
    in_w = lutnet.input_dim * lutnet.layers[0].in_bits
    last = lutnet.layers[-1]
    out_w = last.width * last.out_bits
    lines = [
        f"// top: {len(lutnet.layers)} registered L-LUT layers, latency {lutnet.latency_cycles} cycles",
        f"// M0: {lutnet.input_dim} input codes of {lutnet.layers[0].in_bits} bits "
        f"(signed quantizer, offset binary); code k at M0[{lutnet.layers[0].in_bits}*k +: "
        f"{lutnet.layers[0].in_bits}]",
        f"// M1: {last.width} class codes of {last.out_bits} bits; predicted class = "
        "lowest index with the largest unsigned code",
        "module top (",
        "    input clk,",
        f"    input {_range(in_w - 1, 0)} M0,",
        f"    output {_range(out_w - 1, 0)} M1",
        ");",
    ]
    for i, layer in enumerate(lutnet.layers[:-1]):
        w = layer.width * layer.out_bits
        lines.append(f"    wire {_range(w - 1, 0)} s{i};")
    n = len(lutnet.layers)
    for i in range(n):
        src = "M0" if i == 0 else f"s{i - 1}"
        dst = "M1" if i == n - 1 else f"s{i}"
        lines.append(f"    layer{i} l{i} (.clk(clk), .M0({src}), .M1({dst}));")
    lines += ["endmodule", ""]
    files["top.v"] = "\n".join(lines)
    files["manifest.txt"] = _manifest(lutnet, files)
    return files


def _manifest(lutnet, files):
    lines = ["# neuralut RTL manifest", f"latency_cycles {lutnet.latency_cycles}"]
    lines.append(f"top.v module=top M0={lutnet.input_dim * lutnet.layers[0].in_bits} "
                 f"M1={lutnet.n_classes * lutnet.layers[-1].out_bits}")
    source = lutnet.input_dim
    for i, layer in enumerate(lutnet.layers):
        lines.append(f"layer{i}.v module=layer{i} M0={source * layer.in_bits} "
                     f"M1={layer.width * layer.out_bits} roms={layer.width} "
                     f"fan_in={layer.fan_in} in_bits={layer.in_bits} out_bits={layer.out_bits}")
        source = layer.width
    lines.append(f"seed {lutnet.seed}")
    lines.append("config " + json.dumps(lutnet.config, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def write_rtl(lutnet, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    files = emit_top(lutnet)
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", newline="\n") as f:
            f.write(text)
    return sorted(files)


_TAG_RE = re.compile(r"^// neuralut-rom name=(\w+) fan_in=(\d+) in_bits=(\d+) out_bits=(\d+)$")
_ITEM_RE = re.compile(r"^\s*(\d+)'b([01]+): M1 <= (\d+)'b([01]+);$")


@dataclass
class _RomHeader:
    name: str
    fan_in: int
    in_bits: int
    out_bits: int


def parse_rom(text):
    """Recover the :class:`TruthTable` from one ROM module emitted by :func:`emit_neuron`."""
    lines = text.splitlines()
    header = None
    entries = None
    state = "tag"
    lineno = 0
    for lineno, line in enumerate(lines, start=1):
        s = line.strip()
        if state == "tag":
            m = _TAG_RE.match(s)
            if m:
                header = _RomHeader(m.group(1), *map(int, m.groups()[1:]))
                entries = [None] * (1 << (header.fan_in * header.in_bits))
                state = "module"
            elif s:
                raise RTLParseError("expected neuralut-rom tag comment", lineno)
        elif state == "module":
            if s.startswith("module "):
                if s.split()[1] != header.name:
                    raise RTLParseError(f"module name {s.split()[1]!r} != tag {header.name!r}", lineno)
            elif s == "case (M0)":
                state = "case"
        elif state == "case":
            if s == "endcase":
                state = "end"
                continue
            m = _ITEM_RE.match(line)
            if not m:
                raise RTLParseError(f"malformed case item {s!r}", lineno)
            iw, ibits, ow, obits = m.groups()
            if int(iw) != header.fan_in * header.in_bits or len(ibits) != int(iw):
                raise RTLParseError("case pattern width does not match the declared ROM", lineno)
            if int(ow) != header.out_bits or len(obits) != int(ow):
                raise RTLParseError("output width does not match the declared ROM", lineno)
            idx = int(ibits, 2)
            if entries[idx] is not None:
                raise RTLParseError(f"duplicate case item {idx}", lineno)
            entries[idx] = int(obits, 2)
        elif state == "end":
            if s == "endmodule":
                state = "done"
                break
    if state != "done":
        raise RTLParseError(f"unexpected end of text (state {state})", max(lineno, 1))
    missing = [i for i, v in enumerate(entries) if v is None]
    if missing:
        raise RTLParseError(f"{len(missing)} case items missing, first {missing[0]}", lineno)
    return TruthTable(header.fan_in, header.in_bits, header.out_bits, entries)


def split_roms(text):
    """Split a layer file into the text of its individual ROM modules."""
    chunks = text.split(ROM_TAG)
    return [ROM_TAG + c for c in chunks[1:]]
