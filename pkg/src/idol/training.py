"""Two-stage training: a generalized model, then per-patient overfitting.

Stage 1 minimises the mean task loss over every training-patient sample.
Stage 2 starts from the stage-1 weights and minimises

    lambda_l * mean general loss + lambda_p * mean prior loss

where the prior term runs over K deformed copies of the patient's prior
pair. The prior term reuses the task loss.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import save_model
from .deform import DeformParams, augment_prior
from .metrics import MetricsLog, TASK_METRIC, generalization_error, task_metric
from .nn import Model, build_model, loss
from .optim import AdamState, adam_step
from .phantoms import Cohort, PatientRecord, TASKS, build_cohort

LOSS_FOR_TASK = {"seg": "bce", "sr": "mse", "sct": "mse"}
HEAD_FOR_TASK = {"seg": "sigmoid", "sr": "linear", "sct": "linear"}
_STAGE_CODE = {"general": 1, "idol": 2}


class TrainingDiverged(FloatingPointError):
    def __init__(self, stage: str, epoch: int, patient: str = "cohort"):
        super().__init__(f"non-finite loss in stage {stage!r}, epoch {epoch}, patient {patient}")
        self.stage = stage
        self.epoch = epoch
        self.patient = patient


class LeakageError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs1: int = 50
    epochs2: int = 100
    lr1: float = 1e-3
    lr2: float = 1e-4
    batch_size: int = 8
    lambda_l: float = 0.0
    lambda_p: float = 1.0
    k_prior: int = 32
    amplitude: float = 3.0
    smoothness: float = 4.0
    seed: int = 0
    width: int = 8

    def __post_init__(self):
        if self.lambda_l < 0 or self.lambda_p < 0 or self.lambda_l + self.lambda_p <= 0:
            raise ValueError("need lambda_l >= 0, lambda_p >= 0 and lambda_l + lambda_p > 0")
        if self.epochs1 < 1 or self.epochs2 < 1:
            raise ValueError("epoch counts must be >= 1")
        if self.k_prior < 1:
            raise ValueError("k_prior must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        DeformParams(self.amplitude, self.smoothness)

    @property
    def deform(self) -> DeformParams:
        return DeformParams(self.amplitude, self.smoothness, self.seed)


@dataclass
class TrainResult:
    model: Model
    log: MetricsLog
    stage: str
    patient: Optional[str] = None
    extra: dict = field(default_factory=dict)


def _epoch_rng(seed: int, stage: str, epoch: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, _STAGE_CODE[stage], epoch, stream])


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _checked(value: float, stage: str, epoch: int, patient: str) -> float:
    if not math.isfinite(value):
        raise TrainingDiverged(stage, epoch, patient)
    return value


def _loss_and_metric(model: Model, task: str, x, y) -> tuple[float, float]:
    pred = model.forward(x)
    return loss(LOSS_FOR_TASK[task], pred, y), task_metric(task, pred[:, 0], y[:, 0])


def combined_loss_and_grad(model: Model, general, prior, lambda_l: float, lambda_p: float, kind: str,
                           params=None) -> tuple[float, np.ndarray]:
    """Weighted sum of mean general loss and mean prior loss, with gradient.

    ``general`` and ``prior`` are ``(inputs, targets)`` pairs or ``None``.
    A term with zero weight is skipped entirely.
    """
    total = 0.0
    grad = np.zeros(model.n_params)
    for weight, batch, name in ((lambda_l, general, "general"), (lambda_p, prior, "prior")):
        empty = batch is None or len(batch[0]) == 0
        if weight > 0 and empty:
            raise ValueError(f"{name} batch must be nonempty when its weight is positive")
        if weight == 0 or empty:
            continue
        value, g = model.loss_and_grad(batch[0], batch[1], kind, params=params)
        total += weight * value
        grad += weight * g
    return total, grad


def combined_loss(model: Model, general, prior, lambda_l: float, lambda_p: float, kind: str) -> float:
    return combined_loss_and_grad(model, general, prior, lambda_l, lambda_p, kind)[0]


def fit_general(model: Model, task: str, x, y, config: TrainConfig,
                valid: Optional[dict] = None, log: Optional[MetricsLog] = None) -> MetricsLog:
    """Stage-1 Adam loop over ``(x, y)``; ``valid`` maps patient id -> (x, y).

    Each epoch logs the cohort training loss, the pooled validation loss
    and, per validation patient, its own loss and task metric.
    """
    log = MetricsLog() if log is None else log
    kind = LOSS_FOR_TASK[task]
    metric = TASK_METRIC[task][0]
    valid = valid or {}
    state = AdamState.zeros(model.n_params)
    theta = model.params
    for epoch in range(1, config.epochs1 + 1):
        for idx in _batches(len(x), config.batch_size, _epoch_rng(config.seed, "general", epoch)):
            value, g = model.loss_and_grad(x[idx], y[idx], kind, params=theta)
            _checked(value, "general", epoch, "cohort")
            theta, state = adam_step(state, theta, g, config.lr1)
        model.params = theta
        e_train = _checked(model.evaluate(x, y, kind), "general", epoch, "cohort")
        log.add("general", "cohort", epoch, "train", e_train, seed=config.seed)
        if valid:
            vx = np.concatenate([v[0] for v in valid.values()])
            vy = np.concatenate([v[1] for v in valid.values()])
            e_valid, m = _loss_and_metric(model, task, vx, vy)
            log.add("general", "cohort", epoch, "valid", _checked(e_valid, "general", epoch, "cohort"),
                    metric, m, config.seed)
            for pid, (px, py) in valid.items():
                e, m = _loss_and_metric(model, task, px, py)
                log.add("general", pid, epoch, "valid", e, metric, m, config.seed)
    return log


def fit_personal(model: Model, task: str, prior, config: TrainConfig, general=None,
                 valid=None, patient: str = "patient", log: Optional[MetricsLog] = None) -> MetricsLog:
    """Stage-2 Adam loop on the combined objective, in place on ``model``.

    ``prior`` and ``general`` are ``(x, y)`` sample arrays; ``valid`` is the
    patient's own held-back fractions.
    """
    log = MetricsLog() if log is None else log
    kind = LOSS_FOR_TASK[task]
    metric = TASK_METRIC[task][0]
    lam_l, lam_p = config.lambda_l, config.lambda_p
    use_general = lam_l > 0
    use_prior = lam_p > 0
    if use_general and (general is None or len(general[0]) == 0):
        raise ValueError("lambda_l > 0 requires general training samples")
    if use_prior and (prior is None or len(prior[0]) == 0):
        raise ValueError("lambda_p > 0 requires prior samples")
    bs = config.batch_size
    n_steps = math.ceil(len(prior[0]) / bs) if use_prior else math.ceil(len(general[0]) / bs)
    state = AdamState.zeros(model.n_params)
    theta = model.params
    for epoch in range(1, config.epochs2 + 1):
        prior_batches = _batches(len(prior[0]), bs, _epoch_rng(config.seed, "idol", epoch)) if use_prior else []
        gen_batches = _batches(len(general[0]), bs, _epoch_rng(config.seed, "idol", epoch, 1)) if use_general else []
        for step in range(n_steps):
            pb = gb = None
            if use_prior:
                i = prior_batches[step % len(prior_batches)]
                pb = (prior[0][i], prior[1][i])
            if use_general:
                j = gen_batches[step % len(gen_batches)]
                gb = (general[0][j], general[1][j])
            value, g = combined_loss_and_grad(model, gb, pb, lam_l, lam_p, kind, params=theta)
            _checked(value, "idol", epoch, patient)
            theta, state = adam_step(state, theta, g, config.lr2)
        model.params = theta
        e_train = combined_loss(model, general if use_general else None, prior if use_prior else None,
                                lam_l, lam_p, kind)
        log.add("idol", patient, epoch, "train", _checked(e_train, "idol", epoch, patient), seed=config.seed)
        if valid is not None:
            e_valid, m = _loss_and_metric(model, task, *valid)
            log.add("idol", patient, epoch, "valid", _checked(e_valid, "idol", epoch, patient),
                    metric, m, config.seed)
    return log


def prior_samples(patient: PatientRecord, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    x0, y0 = patient.prior
    pairs = augment_prior(x0, y0, config.k_prior, config.deform, patient.task)
    return np.stack([p[0] for p in pairs])[:, None], np.stack([p[1] for p in pairs])[:, None]


def train_general(cohort: Cohort, config: TrainConfig, model: Optional[Model] = None) -> TrainResult:
    """Fit the generalized model on every training-patient sample."""
    if len(cohort.train) < 2:
        raise ValueError(f"generalized training needs at least 2 training patients, got {len(cohort.train)}")
    if model is None:
        model = build_model(HEAD_FOR_TASK[cohort.task], cohort.resolution, config.seed, config.width)
    x, y = cohort.training_samples()
    valid = {p.patient_id: p.stacked(1) for p in cohort.holdout}
    log = fit_general(model, cohort.task, x, y, config, valid)
    return TrainResult(model, log, "general")


def personalize(general: TrainResult, patient: PatientRecord, cohort: Cohort, config: TrainConfig) -> TrainResult:
    """Copy the general model and overfit it to ``patient``'s augmented prior."""
    if patient.patient_id in cohort.train_ids:
        raise LeakageError(f"patient {patient.patient_id} is part of the training cohort")
    if patient.task != cohort.task:
        raise ValueError(f"patient task {patient.task!r} differs from cohort task {cohort.task!r}")
    model = general.model.copy()
    prior = prior_samples(patient, config) if config.lambda_p > 0 else None
    gen = cohort.training_samples() if config.lambda_l > 0 else None
    log = fit_personal(model, cohort.task, prior, config, gen, patient.stacked(1), patient.patient_id)
    return TrainResult(model, log, "idol", patient.patient_id)


def _final(log: MetricsLog, stage, split, patient) -> float:
    return log.series(stage, split, patient)[-1].loss


def run_experiment(task: str, config: TrainConfig, out_dir, n_train: int = 20, n_holdout: int = 5,
                   resolution: int = 32, echo: Optional[dict] = None) -> dict:
    """Build the cohort, train both stages, evaluate and write every artifact."""
    from .report import write_svg

    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cohort = build_cohort(task, n_train, n_holdout, resolution, config.seed)
    general = train_general(cohort, config)
    log = MetricsLog()
    log.extend(general.log)
    metric, higher = TASK_METRIC[task]
    e_train1 = _final(general.log, "general", "train", "cohort")
    rows = []
    checkpoints = [("general", general.model, "general")]
    for p in cohort.holdout:
        res = personalize(general, p, cohort, config)
        log.extend(res.log)
        vx, vy = p.stacked(1)
        _, g_metric = _loss_and_metric(general.model, task, vx, vy)
        _, i_metric = _loss_and_metric(res.model, task, vx, vy)
        g_valid = _final(general.log, "general", "valid", p.patient_id)
        i_train = _final(res.log, "idol", "train", p.patient_id)
        i_valid = _final(res.log, "idol", "valid", p.patient_id)
        rows.append({
            "patient": p.patient_id,
            "general_metric": g_metric,
            "idol_metric": i_metric,
            "delta": i_metric - g_metric,
            "improvement": (i_metric - g_metric) if higher else (g_metric - i_metric),
            "general_e_valid": g_valid,
            "idol_e_train": i_train,
            "idol_e_valid": i_valid,
            "e_gen": generalization_error(e_train1, g_valid).value,
            "e_idol": generalization_error(i_train, i_valid).value,
        })
        checkpoints.append((f"idol_{p.patient_id}", res.model, "idol"))
    e_valid1 = _final(general.log, "general", "valid", "cohort")
    summary = {
        "task": task,
        "metric": metric,
        "higher_is_better": higher,
        "config": echo if echo is not None else dict(asdict(config), task=task, patients=n_train,
                                                     holdout=n_holdout, resolution=resolution),
        "general": {"e_train": e_train1, "e_valid": e_valid1,
                    "e_gen": generalization_error(e_train1, e_valid1).value},
        "patients": rows,
        "mean_general_metric": float(np.mean([r["general_metric"] for r in rows])),
        "mean_idol_metric": float(np.mean([r["idol_metric"] for r in rows])),
        "mean_improvement": float(np.mean([r["improvement"] for r in rows])),
    }
    for name, model, stage in checkpoints:
        save_model(model, out, name, stage)
    (out / "curves.csv").write_text(log.to_csv())
    write_svg(log, out / "curves.svg", config.epochs1)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
