"""Self-supervised loss functions.

Every function here is a pure function of tensors (no module state), so the
same code path is used in training and in the oracle tests. Inputs that are
stop-gradient targets are detached inside the function as well, so a caller
cannot accidentally back-propagate into them.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F


class LossInputError(ValueError):
    pass


def _l2_normalize(x: torch.Tensor, what: str) -> torch.Tensor:
    norms = x.norm(dim=-1, keepdim=True)
    if (norms == 0).any():
        raise LossInputError(f"zero-norm vector in {what}; normalization undefined")
    return x / norms


def info_nce(q: torch.Tensor, keys: torch.Tensor, mode: str = "bilinear",
             W: torch.Tensor | None = None, tau: float = 1.0) -> torch.Tensor:
    """Contrastive loss with in-batch negatives; row ``i`` of ``keys`` is the positive for ``q[i]``."""
    if q.dim() != 2 or q.shape != keys.shape:
        raise LossInputError(f"q and keys must both be (N, k), got {tuple(q.shape)} and {tuple(keys.shape)}")
    if q.shape[0] < 2:
        raise LossInputError("info_nce needs at least two rows (no negatives otherwise)")
    keys = keys.detach()
    if mode == "bilinear":
        if W is None:
            raise LossInputError("bilinear mode needs W")
        logits = q @ W @ keys.T
    elif mode == "dot_temperature":
        if tau <= 0:
            raise LossInputError("temperature must be positive")
        logits = q @ keys.T / tau
    else:
        raise LossInputError(f"unknown info_nce mode {mode!r}")
    labels = torch.arange(q.shape[0], device=q.device)
    return F.cross_entropy(logits, labels)


def curl_conditioned(q, keys, extra_q, extra_keys, **kwargs) -> torch.Tensor:
    """InfoNCE on ``concat(repr, extra)`` for both queries and keys."""
    if extra_q.shape != extra_keys.shape or extra_q.shape[0] != q.shape[0]:
        raise LossInputError(
            f"extra inputs must match: {tuple(extra_q.shape)} vs {tuple(extra_keys.shape)} for N={q.shape[0]}")
    return info_nce(torch.cat([q, extra_q], dim=-1), torch.cat([keys, extra_keys], dim=-1), **kwargs)


def _byol_term(p, z):
    p = _l2_normalize(p, "prediction")
    z = _l2_normalize(z.detach(), "target projection")
    return (p - z).pow(2).sum(-1).mean()


def byol_loss(p1, z2, p1_swap, z2_swap) -> torch.Tensor:
    """Mean of the two normalized-MSE terms; each term equals 2 - 2 cos."""
    return 0.5 * (_byol_term(p1, z2) + _byol_term(p1_swap, z2_swap))


def _neg_cos(h, z):
    h = _l2_normalize(h, "prediction")
    z = _l2_normalize(z.detach(), "projection")
    return -(h * z).sum(-1).mean()


def simsiam_loss(h, h_swap, z, z_swap) -> torch.Tensor:
    """``h``/``z`` come from view v, ``h_swap``/``z_swap`` from view v'."""
    return 0.5 * (_neg_cos(h, z_swap) + _neg_cos(h_swap, z))


def dino_cross_entropy(student, teacher, center, tau_s: float, tau_t: float) -> torch.Tensor:
    p_t = F.softmax((teacher.detach() - center) / tau_t, dim=-1)
    log_p_s = F.log_softmax(student / tau_s, dim=-1)
    return -(p_t * log_p_s).sum(-1).mean()


def dino_loss(student1, student2, teacher1, teacher2, center,
              tau_s: float = 0.1, tau_t: float = 0.04, m_c: float = 0.9):
    """Symmetric DINO loss and the updated center.

    ``student1``/``teacher1`` are computed on view v, ``student2``/``teacher2``
    on view v'; each student is matched against the teacher of the other view.
    """
    loss = 0.5 * (dino_cross_entropy(student1, teacher2, center, tau_s, tau_t)
                  + dino_cross_entropy(student2, teacher1, center, tau_s, tau_t))
    with torch.no_grad():
        batch_center = torch.cat([teacher1, teacher2]).detach().mean(0)
        new_center = m_c * center + (1 - m_c) * batch_center
    return loss, new_center


def rotate_images(images: torch.Tensor, k: torch.Tensor | np.ndarray) -> torch.Tensor:
    """Rotate each NCHW image counter-clockwise by ``k[i] * 90`` degrees."""
    if images.shape[-1] != images.shape[-2]:
        raise LossInputError(f"rotation needs square images, got {tuple(images.shape[-2:])}")
    k = torch.as_tensor(np.asarray(k), dtype=torch.long)
    out = images.clone()
    for turns in range(1, 4):
        idx = (k == turns).nonzero(as_tuple=True)[0]
        if len(idx):
            out[idx] = torch.rot90(images[idx], turns, dims=(-2, -1))
    return out


def rotation_cls_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    if logits.shape[-1] != 4:
        raise LossInputError("rotation classifier must emit 4 logits")
    return F.cross_entropy(logits, torch.as_tensor(np.asarray(labels), dtype=torch.long))


def shuffle_pairs(x1, x2, swap):
    """Swap rows of ``(x1, x2)`` where ``swap`` is true; returns the new pair."""
    swap = torch.as_tensor(np.asarray(swap), dtype=torch.bool)
    mask = swap.view(-1, *([1] * (x1.dim() - 1)))
    return torch.where(mask, x2, x1), torch.where(mask, x1, x2)


def shuffle_cls_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    labels = torch.as_tensor(np.asarray(labels), dtype=logits.dtype).view_as(logits)
    return F.binary_cross_entropy_with_logits(logits, labels)


def crop_upper_left(target: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    h, w = size
    if h > target.shape[-2] or w > target.shape[-1]:
        raise LossInputError("decoder output larger than its target")
    return target[..., :h, :w]


def rae_regularizer(z, decoder_params, lambda_z: float, lambda_theta: float) -> torch.Tensor:
    latent = z.pow(2).sum(-1).mean()
    weights = sum(p.pow(2).sum() for p in decoder_params)
    return lambda_z * latent + lambda_theta * weights


def ae_loss(recon, target, z, decoder_params, lambda_z: float = 1e-6,
            lambda_theta: float = 1e-7) -> torch.Tensor:
    """RAE objective: MSE to the (upper-left cropped) target plus latent and decoder penalties."""
    target = crop_upper_left(target, recon.shape[-2:])
    return F.mse_loss(recon, target) + rae_regularizer(z, list(decoder_params), lambda_z, lambda_theta)


def masked_patch_count(size: int, patch_size: int, mask_ratio: float) -> tuple[int, int]:
    if size % patch_size:
        raise LossInputError(f"image side {size} not divisible by patch size {patch_size}")
    n = (size // patch_size) ** 2
    return n, int(np.floor(mask_ratio * n))


def sample_patch_mask(batch: int, size: int, patch_size: int, mask_ratio: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Boolean ``(batch, size, size)`` pixel mask, True on masked patches."""
    n, n_mask = masked_patch_count(size, patch_size, mask_ratio)
    grid = size // patch_size
    patch_mask = np.zeros((batch, n), dtype=bool)
    for i in range(batch):
        patch_mask[i, rng.permutation(n)[:n_mask]] = True
    patch_mask = patch_mask.reshape(batch, grid, grid)
    return patch_mask.repeat(patch_size, axis=1).repeat(patch_size, axis=2)


def apply_patch_mask(images: torch.Tensor, mask) -> torch.Tensor:
    """Zero the masked pixels of an NCHW batch."""
    keep = ~torch.as_tensor(mask, dtype=torch.bool)
    return images * keep.unsqueeze(1).to(images.dtype)


def mae_loss(recon, target, mask, z, decoder_params, lambda_z: float = 1e-6,
             lambda_theta: float = 1e-7) -> torch.Tensor:
    """Reconstruction MSE over masked pixels only, plus the RAE penalties."""
    h, w = recon.shape[-2:]
    target = crop_upper_left(target, (h, w))
    m = torch.as_tensor(mask, dtype=torch.bool)[:, :h, :w].unsqueeze(1).expand_as(recon)
    count = m.sum()
    if count == 0:
        raise LossInputError("mask covers no pixels of the decoder output")
    err = torch.where(m, recon - target, torch.zeros_like(recon))
    return err.pow(2).sum() / count + rae_regularizer(z, list(decoder_params), lambda_z, lambda_theta)


def context_loss(outputs: tuple[str, ...], preds: Mapping[str, torch.Tensor],
                 targets: Mapping[str, torch.Tensor], balanced: bool = False,
                 discrete: frozenset[str] = frozenset()) -> torch.Tensor:
    """Prediction loss over the missing transition components.

    Continuous outputs use MSE, names in ``discrete`` use cross-entropy on
    integer targets. The default mode pools the squared error over the
    concatenated continuous elements; ``balanced`` averages per-output losses.
    """
    if not outputs:
        raise LossInputError("context loss needs at least one output")
    per_output = []
    for name in outputs:
        if name in discrete:
            per_output.append(F.cross_entropy(preds[name], targets[name].long().view(-1)))
        else:
            per_output.append(F.mse_loss(preds[name], targets[name].detach()))
    if balanced or len(outputs) == 1:
        return sum(per_output) / len(per_output)
    continuous = [n for n in outputs if n not in discrete]
    discrete_terms = [l for n, l in zip(outputs, per_output) if n in discrete]
    pooled = []
    if continuous:
        pred = torch.cat([preds[n] for n in continuous], dim=-1)
        tgt = torch.cat([targets[n].detach() for n in continuous], dim=-1)
        pooled.append(F.mse_loss(pred, tgt))
    return sum(pooled + discrete_terms)


def balanced_combine(loss_a, loss_b):
    return (loss_a + loss_b) / 2


def combo_loss(weights: Mapping[str, float], losses: Mapping[str, torch.Tensor]):
    """Weighted sum of named losses; zero-weight entries need not be computed."""
    total = 0.0
    for name, w in weights.items():
        if w == 0:
            continue
        if name not in losses:
            raise KeyError(f"no computed loss named {name!r}")
        total = total + w * losses[name]
    return total
