from .losses import TranslationBatch, cycle_loss, cyclegan_objective, gan_loss, total_objective
from .networks import Generator, NetworkConfig, PatchDiscriminator
from .train import TranslationTrainConfig, train_translation, translate

__all__ = [
    "Generator",
    "NetworkConfig",
    "PatchDiscriminator",
    "TranslationBatch",
    "TranslationTrainConfig",
    "cycle_loss",
    "cyclegan_objective",
    "gan_loss",
    "total_objective",
    "train_translation",
    "translate",
]
