"""scikit-learn estimator wrapper around the training and conversion pipeline."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .lutgen import model_to_lutnetwork
from .netsim import netlist_predict
from .topology import build_model, predict, predict_logits
from .training import TrainConfig, train


class NeuraLUTClassifier(ClassifierMixin, BaseEstimator):
    """Circuit model of sparsely connected residual sub-networks.

    Parameters
    ----------
    layers : tuple of int
        Lookup tables per layer. The last entry must equal the number of classes.
    beta : int
        Bits per value at every layer boundary.
    fan_in : int
        Inputs per lookup table.
    exceptions : dict, optional
        ``{layer_index: {"beta": ..., "fan_in": ...}}`` per-layer overrides;
        ``beta`` of layer 0 is the input quantizer width.
    depth, hidden, skip : int
        Depth ``L``, hidden width ``N`` and skip period ``S`` of every sub-network.
    max_table_bits : int
        Upper bound on ``fan_in * beta`` for any layer.
    lr_max, lr_min, weight_decay, batch_size, epochs, restart_period, restart_mult
        Optimizer and schedule settings, see :class:`neuralut.training.TrainConfig`.
    random_state : int
        Seed for connectivity, initialization and shuffling.

    Attributes
    ----------
    model_ : CircuitModel
        Best model found during training.
    history_ : TrainHistory
    classes_ : ndarray
    """

    def __init__(self, layers=(64, 32, 10), beta=2, fan_in=6, exceptions=None,
                 depth=4, hidden=16, skip=2, max_table_bits=20,
                 lr_max=1e-2, lr_min=1e-4, weight_decay=1e-4, batch_size=128,
                 epochs=50, restart_period=10.0, restart_mult=2.0, random_state=0):
        self.layers = layers
        self.beta = beta
        self.fan_in = fan_in
        self.exceptions = exceptions
        self.depth = depth
        self.hidden = hidden
        self.skip = skip
        self.max_table_bits = max_table_bits
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.restart_period = restart_period
        self.restart_mult = restart_mult
        self.random_state = random_state

    def model_config(self, input_dim):
        return {
            "input_dim": int(input_dim),
            "layers": list(self.layers),
            "beta": self.beta,
            "fan_in": self.fan_in,
            "exceptions": {str(k): dict(v) for k, v in (self.exceptions or {}).items()},
            "subnet": {"L": self.depth, "N": self.hidden, "S": self.skip},
            "max_table_bits": self.max_table_bits,
        }

    def _encode(self, y):
        idx = np.searchsorted(self.classes_, y)
        if np.any(idx >= len(self.classes_)) or np.any(self.classes_[np.minimum(idx, len(self.classes_) - 1)] != y):
            raise ValueError("y contains labels not seen during fit")
        return idx

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; ``eval_set=(X_test, y_test)`` selects the best epoch."""
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != self.layers[-1]:
            raise ValueError(
                f"last layer has {self.layers[-1]} nodes but y has {len(self.classes_)} classes"
            )
        self.n_features_in_ = X.shape[1]
        cfg = TrainConfig(
            lr_max=self.lr_max, lr_min=self.lr_min, weight_decay=self.weight_decay,
            batch_size=self.batch_size, epochs=self.epochs,
            restart_period=self.restart_period, restart_mult=self.restart_mult,
            seed=self.random_state,
        )
        model = build_model(self.model_config(X.shape[1]), seed=self.random_state)
        n_classes = len(self.classes_)
        train_set = Dataset(X, self._encode(y), n_classes)
        test_set = None
        if eval_set is not None:
            Xt, yt = check_X_y(*eval_set, dtype=np.float64)
            test_set = Dataset(Xt, self._encode(yt), n_classes)
        self.model_, self.history_ = train(model, train_set, test_set, cfg)
        return self

    def decision_function(self, X):
        """Dequantized output values of the last layer."""
        check_is_fitted(self, "model_")
        return predict_logits(self.model_, check_array(X, dtype=np.float64))

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[predict(self.model_, check_array(X, dtype=np.float64))]

    def to_lutnetwork(self, threads=1):
        """Compile the fitted model into a :class:`neuralut.lutgen.LutNetwork`."""
        check_is_fitted(self, "model_")
        return model_to_lutnetwork(self.model_, threads=threads)

    def predict_netlist(self, X, lutnet=None):
        """Predictions computed by table lookups only."""
        lutnet = lutnet if lutnet is not None else self.to_lutnetwork()
        return self.classes_[netlist_predict(lutnet, check_array(X, dtype=np.float64))]
