import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from daan import DAANClassifier
from daan.datagen import ShiftScenario, make_task


@pytest.fixture(scope="module")
def data():
    src, tgt = make_task(ShiftScenario("marginal", 1.0, 0), n=60)
    labels = np.array(["cat", "dog", "eel"])
    return src.X, labels[src.y], tgt.X, labels[tgt.y_eval]


def small(**kw):
    base = dict(epochs=2, batch_size=16, feature_dim=6, hidden_width=6, discriminator_hidden=6, random_state=0)
    base.update(kw)
    return DAANClassifier(**base)


class TestParams:
    def test_get_set_params(self):
        est = small(omega=0.3)
        assert est.get_params()["omega"] == 0.3
        est.set_params(lambda_adapt=0.5)
        assert est.lambda_adapt == 0.5

    def test_clone(self):
        est = small(omega="dynamic")
        assert clone(est).get_params() == est.get_params()


class TestFit:
    def test_fit_predict_transform(self, data):
        X, y, Xt, yt = data
        est = small().fit(X, y, X_target=Xt, y_target_eval=yt)
        assert set(est.predict(Xt)) <= set(est.classes_)
        proba = est.predict_proba(Xt)
        assert proba.shape == (60, 3)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        assert est.transform(Xt).shape == (60, 6)
        assert len(est.metrics_) == 2 and est.n_features_in_ == 2
        assert 0.0 <= est.score(Xt, yt) <= 1.0

    def test_deterministic(self, data):
        X, y, Xt, _ = data
        a = small().fit(X, y, X_target=Xt).predict_proba(Xt)
        b = small().fit(X, y, X_target=Xt).predict_proba(Xt)
        np.testing.assert_array_equal(a, b)

    def test_fixed_omega(self, data):
        X, y, Xt, _ = data
        est = small(omega=0.0).fit(X, y, X_target=Xt)
        assert {r.omega for r in est.metrics_} == {0.0}

    def test_needs_target(self, data):
        X, y, _, _ = data
        with pytest.raises(ValueError, match="X_target"):
            small().fit(X, y)

    def test_target_width(self, data):
        X, y, Xt, _ = data
        with pytest.raises(ValueError, match="features"):
            small().fit(X, y, X_target=np.hstack([Xt, Xt]))

    def test_nan_rejected(self, data):
        X, y, Xt, _ = data
        bad = X.copy()
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            small().fit(bad, y, X_target=Xt)

    def test_one_class_rejected(self, data):
        X, _, Xt, _ = data
        with pytest.raises(ValueError, match="two classes"):
            small().fit(X, np.zeros(len(X)), X_target=Xt)

    def test_not_fitted(self, data):
        with pytest.raises(NotFittedError):
            small().predict(data[2])

    def test_predict_width(self, data):
        X, y, Xt, _ = data
        est = small().fit(X, y, X_target=Xt)
        with pytest.raises(ValueError, match="expects 2"):
            est.predict(np.ones((3, 4)))
