import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer

from neuralut import NeuraLUTClassifier
from neuralut.data import gen_two_semicircles


def small_clf(**kw):
    base = dict(layers=(6, 2), beta=2, fan_in=2, exceptions={0: {"beta": 4}}, depth=2, hidden=8,
                skip=0, epochs=5, batch_size=32)
    base.update(kw)
    return NeuraLUTClassifier(**base)


def test_get_params_and_clone():
    clf = small_clf(random_state=3)
    params = clf.get_params()
    assert params["random_state"] == 3 and params["hidden"] == 8
    assert clone(clf).get_params() == params


def test_fit_predict_with_string_labels():
    ds = gen_two_semicircles(150, 0.1, seed=0)
    y = np.array(["a", "b"])[ds.y]
    clf = small_clf().fit(ds.X, y, eval_set=(ds.X, y))
    pred = clf.predict(ds.X)
    assert set(pred) <= {"a", "b"}
    assert clf.score(ds.X, y) > 0.7
    np.testing.assert_array_equal(clf.predict_netlist(ds.X), pred)
    assert clf.decision_function(ds.X).shape == (300, 2)


def test_pipeline_and_validation():
    ds = gen_two_semicircles(80, 0.1, seed=1)
    pipe = make_pipeline(FunctionTransformer(), small_clf(epochs=2)).fit(ds.X, ds.y)
    assert pipe.predict(ds.X).shape == (160,)
    with pytest.raises(NotFittedError):
        small_clf().predict(ds.X)
    with pytest.raises(ValueError):
        small_clf(layers=(6, 3)).fit(ds.X, ds.y)
