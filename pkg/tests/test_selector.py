import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.linear_model import LogisticRegression

from gerbil import GerbilSelector

FAST = dict(
    collector_epochs=15,
    shuffles=2,
    train_epochs=2,
    batch_size=64,
    learning_rate=1e-3,
    top_k=3,
    search_steps=2,
    folds=3,
)


@pytest.fixture(scope="module")
def xy():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 6))
    y = np.where(X[:, 2] + 0.3 * rng.standard_normal(40) > 0, "case", "control")
    return X, y


@pytest.fixture(scope="module")
def fitted(xy):
    return GerbilSelector(**FAST).fit(*xy)


def test_params_round_trip():
    sel = GerbilSelector(top_k=7, random_state=3)
    params = sel.get_params()
    assert params["top_k"] == 7 and params["random_state"] == 3
    twin = clone(sel)
    assert twin.get_params() == params
    sel.set_params(eta=0.1)
    assert sel.eta == 0.1


def test_fit_attributes(fitted, xy):
    X, y = xy
    assert fitted.n_features_in_ == 6
    assert fitted.support_.shape == (6,) and fitted.support_.any()
    assert list(np.flatnonzero(fitted.support_)) == list(fitted.subset_)
    assert list(fitted.classes_) == ["case", "control"]
    assert 0 <= fitted.utility_ <= 1
    assert len(fitted.training_curve_) == 2
    assert fitted.transform(X).shape == (40, len(fitted.subset_))


def test_transform_before_fit(xy):
    with pytest.raises(NotFittedError):
        GerbilSelector().transform(xy[0])


def test_rejects_non_binary_and_nan(xy):
    X, _ = xy
    with pytest.raises(ValueError):
        GerbilSelector(**FAST).fit(X, np.arange(40) % 3)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        GerbilSelector(**FAST).fit(bad, np.arange(40) % 2)


def test_same_seed_same_subset(xy, fitted):
    again = GerbilSelector(**FAST).fit(*xy)
    assert again.subset_ == fitted.subset_
    assert again.utility_ == fitted.utility_


def test_transform_checks_width(fitted):
    with pytest.raises(ValueError):
        fitted.transform(np.zeros((2, 5)))


def test_inside_pipeline(xy):
    X, y = xy
    pipe = make_pipeline(GerbilSelector(**FAST), LogisticRegression())
    pipe.fit(X, y)
    assert pipe.score(X, y) > 0.5
