"""Two-stage training: a generalized model, then intentional per-patient overfitting."""
from .deform import DeformParams, DeformationField, augment_prior, random_dvf, warp_image, warp_labels
from .estimator import IDOLEstimator
from .metrics import MetricsLog, curve_export, dsc, generalization_error, mae, psnr
from .nn import LayerSpec, Model, backward, encoder_decoder, forward, loss
from .optim import AdamState, adam_step
from .gradcheck import gradient_check
from .phantoms import build_cohort, generate_patient, render_fraction
from .training import TrainConfig, combined_loss, personalize, run_experiment, train_general

__version__ = "0.1.0"
