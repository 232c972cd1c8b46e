"""Dynamic adversarial domain adaptation at desk scale."""
from .autodiff import Tape, Tensor, backward, check_gradients, grad_reverse
from .datagen import LabeledDomain, ShiftScenario, TargetDomain, make_task
from .estimator import DAANClassifier
from .net import DaanModel, NetConfig, init_model
from .omega import OmegaState, a_distance, estimate
from .trainer import MetricsRow, TrainConfig, evaluate, fit, lr_at

__version__ = "0.1.0"
