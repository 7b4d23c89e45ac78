import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mixkit import MixITSeparator
from mixkit.semantic import BandEnergyClassifier

SR = 8000


@pytest.fixture
def refs():
    t = np.arange(1000) / SR
    return np.stack([0.5 * np.sin(2 * np.pi * 200 * t), 0.3 * np.sin(2 * np.pi * 1200 * t)])


def test_params_roundtrip():
    est = MixITSeparator(n_sources=3, weight_l1l2=2.0, steps=10)
    params = est.get_params()
    assert params["n_sources"] == 3 and params["weight_l1l2"] == 2.0
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(weight_cov=0.5)
    assert est.weight_cov == 0.5


def test_fit_transform(refs):
    est = MixITSeparator(n_sources=3, steps=300, random_state=1)
    out = est.fit_transform(refs)
    assert out.shape == (3, 1000)
    np.testing.assert_allclose(out.sum(axis=0), refs.sum(axis=0), atol=1e-9)
    assert est.assignment_.shape == (2, 3)
    assert est.loss_trace_.shape == (300,)
    np.testing.assert_array_equal(est.transform(refs), out)
    assert est.score(refs) > 40.0


def test_single_mixture_input(refs):
    out = MixITSeparator(n_sources=2, steps=20).fit_transform(refs.sum(axis=0))
    assert out.shape == (2, 1000)


def test_transform_needs_fit(refs):
    with pytest.raises(NotFittedError):
        MixITSeparator().transform(refs)


def test_rejects_nan(refs):
    bad = refs.copy()
    bad[0, 3] = np.nan
    with pytest.raises(ValueError):
        MixITSeparator(steps=5).fit(bad)


def test_semantic_weights_need_classifier(refs):
    with pytest.raises(ValueError, match="classifier"):
        MixITSeparator(weight_ce=1.0, steps=5).fit(refs, [1, 0])


def test_semantic_fit_uses_unfitted_classifier(refs):
    clf = BandEnergyClassifier(bands=[(100.0, 300.0), (1000.0, 1400.0)], sample_rate=SR)
    est = MixITSeparator(n_sources=2, weight_ce=1.0, weight_cos=1.0, steps=50, classifier=clf)
    est.fit(refs, [1, 1])
    assert not hasattr(clf, "slope_")
    assert est.sources_.shape == (2, 1000)
