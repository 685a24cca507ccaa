"""Numerical lab for crossmodal knowledge distillation on synthetic multimodal data."""
__version__ = "0.1.0"

from .kd import KdConfig, distill, evaluate, kd_loss
from .models import GdOptions, Model, NumericalError, ce_loss, kl_div, make_model, train_ce
from .mvd import MultimodalDataset, MvdSpec, build_alpha_point, build_gamma_point, gamma_of, sample
from .ranking import SaliencyVector, joint_train, make_nullify_plan, rank_features
from .theory import TheoremCertificate, lemma_l, lemma_l_max, verify_bound

__all__ = [
    "GdOptions", "KdConfig", "Model", "MultimodalDataset", "MvdSpec", "NumericalError", "SaliencyVector",
    "TheoremCertificate", "build_alpha_point", "build_gamma_point", "ce_loss", "distill", "evaluate",
    "gamma_of", "joint_train", "kd_loss", "kl_div", "lemma_l", "lemma_l_max", "make_model",
    "make_nullify_plan", "rank_features", "sample", "train_ce", "verify_bound",
]
