"""Alignment and contrastive objectives on paired modality features.

Two ingredients, combined by a weighted sum:

  - a correlation-alignment term that drives the batch cross-correlation
    matrix between the two feature sets toward the identity (diagonal
    pulled to 1, off-diagonal squashed), and
  - a dual cross-modal contrastive term where each sample's feature in
    one modality treats its counterpart in the other modality as the
    positive and every other feature in the batch (both modalities) as
    negatives, with exponentiated cosine similarity at temperature tau.

The correlation matrix is intentionally NOT mean-centered: the
normalization is a plain per-column norm, with an optional ``center``
flag for the Pearson-style variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DegenerateInputError
from .tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    lambda_offdiag: float = 0.005  # off-diagonal weight inside the alignment term
    lambda_cor: float = 0.9        # weight of the alignment term in the total
    lambda_self: float = 0.1       # weight of the contrastive term in the total
    tau: float = 0.1               # contrastive temperature
    center: bool = False           # mean-center columns before correlating

    def __post_init__(self):
        for name in ("lambda_offdiag", "lambda_cor", "lambda_self", "tau"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"LossConfig.{name} must be positive")


@dataclass
class CorrelationMatrix:
    """d x d batch cross-correlation; entries lie in [-1, 1] up to roundoff."""

    values: Tensor


def _check_features(f_v: Tensor, f_a: Tensor) -> tuple[int, int]:
    if f_v.ndim != 2 or f_a.ndim != 2 or f_v.shape != f_a.shape:
        raise ContractError(
            f"features must be matching batch x dim matrices, got {f_v.shape} and {f_a.shape}")
    return f_v.shape


def _repeat_rows(vec: Tensor, rows: int) -> Tensor:
    # [d] -> [rows x d] by multiplying with a constant ones column
    return Tensor(np.ones((rows, 1))) @ vec.reshape(1, vec.size)


def _repeat_cols(vec: Tensor, cols: int) -> Tensor:
    # [n] -> [n x cols]
    return vec.reshape(vec.size, 1) @ Tensor(np.ones((1, cols)))


def cross_correlation(f_v: Tensor, f_a: Tensor, center: bool = False) -> CorrelationMatrix:
    """C[i, j] = sum_b f_v[b, i] f_a[b, j] / (||f_v[:, i]|| ||f_a[:, j]||)."""
    n, d = _check_features(f_v, f_a)
    if center:
        f_v = f_v - _repeat_rows(f_v.sum(axis=0) * (1.0 / n), n)
        f_a = f_a - _repeat_rows(f_a.sum(axis=0) * (1.0 / n), n)
    for name, f in (("f_v", f_v), ("f_a", f_a)):
        norms = np.sqrt(np.sum(f.data * f.data, axis=0))
        if np.any(norms == 0.0):
            col = int(np.argmin(norms))
            raise DegenerateInputError(
                f"cross_correlation: column {col} of {name} has zero norm over the batch")
    v_hat = f_v / _repeat_rows(f_v.l2_norm(axis=0), n)
    a_hat = f_a / _repeat_rows(f_a.l2_norm(axis=0), n)
    return CorrelationMatrix(values=v_hat.T @ a_hat)


def cgra_loss(c: CorrelationMatrix | Tensor, lambda_offdiag: float = 0.005) -> Tensor:
    """sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2; zero iff C == I."""
    values = c.values if isinstance(c, CorrelationMatrix) else c
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ContractError(f"correlation matrix must be square, got {values.shape}")
    d = values.shape[0]
    eye = Tensor(np.eye(d))
    off = Tensor(1.0 - np.eye(d))
    on_err = eye - values * eye
    on_term = (on_err * on_err).sum()
    off_part = values * off
    off_term = (off_part * off_part).sum()
    return on_term + off_term * lambda_offdiag


def _cosine_matrix(x_hat: Tensor, y_hat: Tensor) -> Tensor:
    return x_hat @ y_hat.T


def _row_normalize(f: Tensor, name: str) -> Tensor:
    norms = np.sqrt(np.sum(f.data * f.data, axis=1))
    if np.any(norms == 0.0):
        row = int(np.argmin(norms))
        raise DegenerateInputError(f"contrastive loss: row {row} of {name} has zero norm")
    return f / _repeat_cols(f.l2_norm(axis=1), f.shape[1])


def selfcl_loss_v(f_v: Tensor, f_a: Tensor, tau: float = 0.1) -> Tensor:
    """Contrastive loss anchored in the first modality.

    For anchor i the positive is f_a[i]; the denominator sums the
    exponentiated cosine against every f_a[j] (including j = i) and
    against every other f_v[j], j != i.
    """
    n, _ = _check_features(f_v, f_a)
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    v_hat = _row_normalize(f_v, "f_v")
    a_hat = _row_normalize(f_a, "f_a")
    eye = Tensor(np.eye(n))
    off = Tensor(1.0 - np.eye(n))

    sim_cross = _cosine_matrix(v_hat, a_hat) * (1.0 / tau)
    sim_within = _cosine_matrix(v_hat, v_hat) * (1.0 / tau)
    denom = sim_cross.exp().sum(axis=1) + (sim_within.exp() * off).sum(axis=1)
    log_numer = (sim_cross * eye).sum(axis=1)  # log exp(s_ii) = s_ii
    return denom.log().sum() - log_numer.sum()


def selfcl_loss_a(f_a: Tensor, f_v: Tensor, tau: float = 0.1) -> Tensor:
    """Mirror image of selfcl_loss_v with the modality roles swapped."""
    return selfcl_loss_v(f_a, f_v, tau)


def selfcl_total(f_v: Tensor, f_a: Tensor, tau: float = 0.1) -> Tensor:
    return selfcl_loss_v(f_v, f_a, tau) + selfcl_loss_a(f_a, f_v, tau)


def total_loss(f_v: Tensor, f_a: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """Weighted sum of the alignment and contrastive objectives."""
    if cfg is None:
        cfg = LossConfig()
    corr = cgra_loss(cross_correlation(f_v, f_a, center=cfg.center), cfg.lambda_offdiag)
    contrastive = selfcl_total(f_v, f_a, cfg.tau)
    return corr * cfg.lambda_cor + contrastive * cfg.lambda_self
