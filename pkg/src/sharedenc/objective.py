"""Symmetric image-text contrastive loss with a learnable temperature."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DomainError, ShapeError
from .tensor import Tensor

UNIT_NORM_TOL = 1e-5


def _check_pair(z_img: Tensor, z_txt: Tensor):
    if z_img.ndim != 2 or z_txt.ndim != 2:
        raise ShapeError(f"embeddings must be (N, d), got {z_img.shape} and {z_txt.shape}")
    if z_img.shape[1] != z_txt.shape[1]:
        raise ShapeError(f"embedding widths differ: {z_img.shape} vs {z_txt.shape}")


def cosine_similarity_matrix(z_img: Tensor, z_txt: Tensor) -> Tensor:
    """S[i, j] = <z_img[i], z_txt[j]> for unit-norm rows (plain dot products)."""
    _check_pair(z_img, z_txt)
    return T.matmul(z_img, T.transpose(z_txt))


def contrastive_loss(z_img: Tensor, z_txt: Tensor, log_tau: Tensor | float) -> Tensor:
    """Mean over pairs of the image->text plus text->image cross-entropy terms.

    Both directional terms sit inside the single 1/N average, so a batch where
    every row is uniform has loss ``2 * log(N)``. ``log_tau`` may be a 0-d
    parameter tensor or a plain float (then tau = exp(log_tau)).
    """
    _check_pair(z_img, z_txt)
    if z_img.shape[0] != z_txt.shape[0] or z_img.shape[0] < 1:
        raise ShapeError(f"need N >= 1 matched pairs, got {z_img.shape[0]} and {z_txt.shape[0]}")
    if not isinstance(log_tau, Tensor):
        log_tau = Tensor(float(log_tau))
    if log_tau.ndim != 0 or not np.isfinite(log_tau.data):
        raise DomainError("log-temperature must be a finite scalar")
    n = z_img.shape[0]
    inv_tau = T.exp(T.neg(log_tau))
    logits = T.mul(cosine_similarity_matrix(z_img, z_txt), inv_tau)
    i2t = T.sum(T.diagonal(T.log_softmax(logits)))
    t2i = T.sum(T.diagonal(T.log_softmax(T.transpose(logits))))
    return T.scale(T.add(i2t, t2i), -1.0 / n)


def contrastive_loss_tau(z_img: Tensor, z_txt: Tensor, tau: float) -> Tensor:
    """Same loss with a fixed temperature given directly (tau <= 0 raises)."""
    return contrastive_loss(z_img, z_txt, float(np.log(_positive_tau(tau))))


def _positive_tau(tau: float) -> float:
    if not tau > 0:
        raise DomainError(f"temperature must be > 0, got {tau}")
    return tau
