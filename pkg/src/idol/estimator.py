"""scikit-learn style front-end for the two training stages.

>>> est = IDOLEstimator(task="sct", epochs1=5, random_state=0).fit(X, y)
>>> personal = est.personalize(X_prior, y_prior)
>>> personal.predict(X_new)

``fit`` trains the generalized model. ``personalize`` returns a new fitted
estimator whose network was further trained on deformed copies of the
given prior pair (and optionally on the general data as well).
"""
from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .metrics import TASK_METRIC, task_metric
from .nn import Model, encoder_decoder
from .training import HEAD_FOR_TASK, LOSS_FOR_TASK, TrainConfig, fit_general, fit_personal, prior_samples
from .phantoms import PatientRecord, TASKS
from .validation import check_images, check_pair


class IDOLEstimator(BaseEstimator):
    """Encoder-decoder CNN trained generally, then overfit per patient.

    Parameters mirror :class:`idol.training.TrainConfig`; ``random_state``
    is the master seed.
    """

    def __init__(self, task="seg", epochs1=50, epochs2=100, lr1=1e-3, lr2=1e-4, batch_size=8,
                 lambda_l=0.0, lambda_p=1.0, k_prior=32, amplitude=3.0, smoothness=4.0,
                 width=8, random_state=0):
        self.task = task
        self.epochs1 = epochs1
        self.epochs2 = epochs2
        self.lr1 = lr1
        self.lr2 = lr2
        self.batch_size = batch_size
        self.lambda_l = lambda_l
        self.lambda_p = lambda_p
        self.k_prior = k_prior
        self.amplitude = amplitude
        self.smoothness = smoothness
        self.width = width
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        return TrainConfig(self.epochs1, self.epochs2, self.lr1, self.lr2, self.batch_size,
                           self.lambda_l, self.lambda_p, self.k_prior, self.amplitude,
                           self.smoothness, int(self.random_state or 0), self.width)

    def fit(self, X, y, X_valid=None, y_valid=None):
        cfg = self._config()
        X, y = check_pair(X, y, binary_target=self.task == "seg")
        valid = None
        if X_valid is not None:
            valid = {"valid": check_pair(X_valid, y_valid, binary_target=self.task == "seg")}
        head = HEAD_FOR_TASK[self.task]
        model = Model(encoder_decoder(head, cfg.width), X.shape[1:], topology=f"encdec-w{cfg.width}-{head}",
                      seed=cfg.seed)
        self.log_ = fit_general(model, self.task, X, y, cfg, valid)
        self.model_ = model
        self.stage_ = "general"
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def personalize(self, X_prior, y_prior, X_general=None, y_general=None,
                    X_valid=None, y_valid=None, patient="patient") -> "IDOLEstimator":
        """Overfit a copy of the fitted network to one patient's prior pair.

        ``X_prior``/``y_prior`` is a single image pair; it is expanded into
        ``k_prior`` deformed copies. General samples are required only when
        ``lambda_l > 0``.
        """
        check_is_fitted(self, "model_")
        cfg = self._config()
        xp = check_images(X_prior)
        yp = check_images(y_prior)
        if len(xp) != 1 or len(yp) != 1:
            raise ValueError("personalize expects exactly one prior pair")
        record = PatientRecord(patient, self.task, None, [(xp[0, 0], yp[0, 0])])
        prior = prior_samples(record, cfg) if cfg.lambda_p > 0 else None
        general = None
        if cfg.lambda_l > 0:
            if X_general is None:
                raise ValueError("lambda_l > 0 requires X_general and y_general")
            general = check_pair(X_general, y_general, binary_target=self.task == "seg")
        valid = check_pair(X_valid, y_valid, binary_target=self.task == "seg") if X_valid is not None else None
        other = copy.deepcopy(self)
        other.model_ = self.model_.copy()
        other.log_ = fit_personal(other.model_, self.task, prior, cfg, general, valid, patient)
        other.stage_ = "idol"
        return other

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        if self.task != "seg":
            raise AttributeError("predict_proba is only available for the seg task")
        return self.model_.forward(check_images(X))[:, 0]

    def predict(self, X) -> np.ndarray:
        """Images of shape ``(n, H, W)``; binary masks for ``seg``."""
        check_is_fitted(self, "model_")
        out = self.model_.forward(check_images(X))[:, 0]
        if self.task == "seg":
            return (out >= 0.5).astype(np.float64)
        return out

    def score(self, X, y) -> float:
        """Task metric with greater-is-better sign (MAE is negated)."""
        check_is_fitted(self, "model_")
        X, y = check_pair(X, y)
        value = task_metric(self.task, self.model_.forward(X)[:, 0], y[:, 0])
        return value if TASK_METRIC[self.task][1] else -value

    def loss(self, X, y) -> float:
        check_is_fitted(self, "model_")
        X, y = check_pair(X, y)
        return self.model_.evaluate(X, y, LOSS_FOR_TASK[self.task])
