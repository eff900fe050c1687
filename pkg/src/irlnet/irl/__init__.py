from .dataset import DatasetError, ExpertDataset, ExpertRecord
from .gail import (Discriminator, DiscriminatorSaturationWarning, GAILConfig, GAILResult, bce_from_logits,
                   gail_train, surrogate_reward)
from .maxent import LinearReward, MaxEntDivergedError, maxent_gradient, maxent_irl
from .maxmargin import MaxMarginResult, UnsupportedExpertError, max_margin_irl
from .rlhf import RewardModelConfig, RewardNet, rlhf_train, train_reward_model

__all__ = [
    "DatasetError", "ExpertDataset", "ExpertRecord", "Discriminator", "DiscriminatorSaturationWarning",
    "GAILConfig", "GAILResult", "bce_from_logits", "gail_train", "surrogate_reward", "LinearReward",
    "MaxEntDivergedError", "maxent_gradient", "maxent_irl", "MaxMarginResult", "UnsupportedExpertError",
    "max_margin_irl", "RewardModelConfig", "RewardNet", "rlhf_train", "train_reward_model",
]
