"""Gradients, the linear potential provider and the training loops."""
from .fieldmodel import FieldModel
from .gradcheck import GradcheckReport, run_gradcheck
from .gradients import (GradientBundle, frame_gradients, grad_frame_intent, grad_joint, grad_mu,
                        grad_semantic)
from .provider import VARIANTS, LinearProvider
from .train import (TrainConfig, TrainingError, TrainLog, frame_accuracy, train,
                    train_synchronous_baseline)

__all__ = [
    "FieldModel",
    "GradcheckReport",
    "GradientBundle",
    "LinearProvider",
    "TrainConfig",
    "TrainLog",
    "TrainingError",
    "VARIANTS",
    "frame_accuracy",
    "frame_gradients",
    "grad_frame_intent",
    "grad_joint",
    "grad_mu",
    "grad_semantic",
    "run_gradcheck",
    "train",
    "train_synchronous_baseline",
]
