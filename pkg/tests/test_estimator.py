import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from idol.estimator import IDOLEstimator
from idol.validation import check_images, check_pair


@pytest.fixture(scope="module")
def seg_data(tiny_cohort):
    x, y = tiny_cohort.training_samples()
    p = tiny_cohort.holdout[0]
    return x, y, p


def small(**kw):
    base = dict(task="seg", epochs1=2, epochs2=2, k_prior=4, width=4, random_state=3)
    base.update(kw)
    return IDOLEstimator(**base)


def test_params_roundtrip_and_clone():
    est = small(lr2=5e-4)
    params = est.get_params()
    assert params["lr2"] == 5e-4 and params["width"] == 4
    twin = clone(est)
    assert twin.get_params() == params and not hasattr(twin, "model_")
    est.set_params(k_prior=7)
    assert est.k_prior == 7


def test_unfitted_raises(seg_data):
    x, _, _ = seg_data
    with pytest.raises(NotFittedError):
        small().predict(x)


def test_bad_task():
    with pytest.raises(ValueError):
        small(task="bogus").fit(np.zeros((2, 8, 8)), np.zeros((2, 8, 8)))


def test_fit_predict_personalize(seg_data):
    x, y, patient = seg_data
    est = small().fit(x, y)
    assert est.stage_ == "general" and est.n_features_in_ == 32 * 32
    pred = est.predict(x[:3])
    assert pred.shape == (3, 32, 32) and set(np.unique(pred)) <= {0.0, 1.0}
    proba = est.predict_proba(x[:3])
    assert np.all((proba > 0) & (proba < 1))
    assert 0.0 <= est.score(x, y) <= 1.0

    prior_x, prior_y = patient.prior
    before = est.model_.params.copy()
    personal = est.personalize(prior_x, prior_y, patient=patient.patient_id)
    assert personal is not est and personal.stage_ == "idol"
    assert np.array_equal(est.model_.params, before)
    assert not np.array_equal(personal.model_.params, before)
    assert len(personal.log_.series("idol", "train", patient.patient_id)) == 2


def test_fit_is_deterministic(seg_data):
    x, y, _ = seg_data
    a = small().fit(x, y).model_.params
    b = small().fit(x, y).model_.params
    assert a.tobytes() == b.tobytes()


def test_regression_score_sign(rng):
    x = rng.uniform(size=(4, 8, 8))
    est = small(task="sct").fit(x, x ** 0.6)
    assert est.score(x, x ** 0.6) == pytest.approx(-np.mean(np.abs(est.predict(x) - x ** 0.6)))
    with pytest.raises(AttributeError):
        est.predict_proba(x)


def test_general_term_needs_data(seg_data):
    x, y, patient = seg_data
    est = small(lambda_l=1.0).fit(x, y)
    with pytest.raises(ValueError):
        est.personalize(*patient.prior)
    out = est.personalize(*patient.prior, X_general=x, y_general=y)
    assert out.stage_ == "idol"


def test_personalize_needs_single_pair(seg_data):
    x, y, _ = seg_data
    est = small().fit(x, y)
    with pytest.raises(ValueError):
        est.personalize(x[:2], y[:2])


class TestValidation:
    def test_shapes_coerced(self):
        assert check_images(np.zeros((4, 6))).shape == (1, 1, 4, 6)
        assert check_images(np.zeros((3, 4, 6))).shape == (3, 1, 4, 6)
        assert check_images(np.zeros((3, 1, 4, 6))).dtype == np.float64

    @pytest.mark.parametrize("bad", [np.zeros((2, 2, 4, 4)), np.zeros((0, 4, 4)), np.zeros((5, 4)),
                                     np.full((4, 4), np.nan), np.zeros((2, 3, 5, 4, 4))])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            check_images(bad)

    def test_pair_checks(self):
        with pytest.raises(ValueError):
            check_pair(np.zeros((2, 4, 4)), np.zeros((3, 4, 4)))
        with pytest.raises(ValueError):
            check_pair(np.zeros((2, 4, 4)), np.full((2, 4, 4), 0.5), binary_target=True)
