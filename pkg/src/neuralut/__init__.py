"""Lookup-table neural networks with dense residual sub-networks inside each table."""

from .estimator import NeuraLUTClassifier
from .lutgen import LutNetwork, TruthTable, model_to_lutnetwork, neuron_to_table
from .netsim import check_equivalence, netlist_predict, simulate
from .quantization import Quantizer, dequantize, pack_codes, quantize
from .subnet import SubnetConfig, count_params
from .topology import CircuitModel, build_model, model_forward, predict
from .training import TrainConfig, train

__all__ = [
    "CircuitModel", "LutNetwork", "NeuraLUTClassifier", "Quantizer", "SubnetConfig",
    "TrainConfig", "TruthTable", "build_model", "check_equivalence", "count_params",
    "dequantize", "model_forward", "model_to_lutnetwork", "netlist_predict",
    "neuron_to_table", "pack_codes", "predict", "quantize", "simulate", "train",
]

__version__ = "0.1.0"
