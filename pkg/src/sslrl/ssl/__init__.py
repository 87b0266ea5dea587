from .heads import PixelDecoder, SslBatch, SslHeadConfig, SslHeads, needs_momentum
from .losses import (LossInputError, ae_loss, balanced_combine, byol_loss, combo_loss, context_loss,
                     curl_conditioned, dino_loss, info_nce, mae_loss, rotation_cls_loss,
                     shuffle_cls_loss, simsiam_loss)
from .registry import CONTEXT_SPECS, LOSS_NAMES, ContextSpec, LossCombo, context_spec

__all__ = [
    "CONTEXT_SPECS", "ContextSpec", "LOSS_NAMES", "LossCombo", "LossInputError", "PixelDecoder",
    "SslBatch", "SslHeadConfig", "SslHeads", "ae_loss", "balanced_combine", "byol_loss",
    "combo_loss", "context_loss", "context_spec", "curl_conditioned", "dino_loss", "info_nce",
    "mae_loss", "needs_momentum", "rotation_cls_loss", "shuffle_cls_loss", "simsiam_loss",
]
