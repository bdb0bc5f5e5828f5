"""The three training criteria and their bookkeeping.

Adjacency reconstruction is a squared Frobenius norm (a sum), the count
likelihood is a mean over entries so the criteria stay on comparable
scales, and the clustering term is the KL divergence summed over rows.
Each accepts an optional node subset: rows for the likelihood/KL terms,
the row x column submatrix for reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import numerics as nm
from .model import SoftAssignment, ZinbParams
from .numerics import Tensor


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None, state=None):
        self.epoch = epoch
        self.state = state
        super().__init__(message)


@dataclass(frozen=True)
class LossBreakdown:
    rec: float
    zinb: float
    cls: float

    @property
    def total(self) -> float:
        return self.rec + self.zinb + self.cls

    def as_row(self) -> list[float]:
        return [self.rec, self.zinb, self.cls, self.total]


def _dense(adjacency) -> np.ndarray:
    if sp.issparse(adjacency):
        return adjacency.toarray()
    return np.asarray(adjacency, dtype=np.float64)


def loss_rec(adjacency, a_rec: Tensor, mask=None) -> Tensor:
    """Squared Frobenius norm of (A - A_rec), restricted to mask x mask."""
    a = _dense(adjacency)
    a_rec = nm.as_tensor(a_rec)
    if a.shape != a_rec.shape:
        raise nm.ShapeMismatchError(
            f"loss_rec: adjacency {a.shape} vs reconstruction {a_rec.shape}"
        )
    if mask is not None:
        idx = np.asarray(mask, dtype=np.intp)
        a = a[np.ix_(idx, idx)]
        a_rec = nm.index_rows(nm.index_rows(a_rec, idx).T, idx).T
    diff = nm.as_tensor(a) - a_rec
    return (diff * diff).sum()


def loss_zinb(raw_counts, params: ZinbParams, mask=None) -> Tensor:
    """Mean negative log-likelihood of the zero-inflated negative binomial.

    Computed in log space: the zero branch is logaddexp(log pi,
    log(1-pi) + theta log(theta/(theta+mu))); the positive branch is the
    usual log NB pmf plus log(1-pi).
    """
    x = np.asarray(raw_counts, dtype=np.float64)
    pi, mu, theta = params.pi, params.mu, params.theta
    if x.shape != pi.shape:
        raise nm.ShapeMismatchError(
            f"loss_zinb: counts {x.shape} vs parameter matrices {pi.shape}"
        )
    if mask is not None:
        idx = np.asarray(mask, dtype=np.intp)
        x = x[idx]
        pi = nm.index_rows(pi, idx)
        mu = nm.index_rows(mu, idx)
        theta = nm.index_rows(theta, idx)

    log_pi = nm.log(pi)
    log_1m_pi = nm.log(1.0 - pi)
    log_theta_frac = theta * (nm.log(theta) - nm.log(theta + mu))

    zero_loglik = nm.logaddexp(log_pi, log_1m_pi + log_theta_frac)
    positive_loglik = (
        log_1m_pi
        + nm.log_gamma(x + theta)
        - nm.log_gamma(nm.Tensor(x + 1.0))
        - nm.log_gamma(theta)
        + log_theta_frac
        + x * (nm.log(mu) - nm.log(theta + mu))
    )
    is_zero = (x == 0).astype(np.float64)
    loglik = is_zero * zero_loglik + (1.0 - is_zero) * positive_loglik
    nll = (-1.0 * loglik).mean()
    if not np.isfinite(nll.values):
        raise NonFiniteLossError("zero-inflated likelihood is non-finite")
    return nll


def target_distribution(q) -> np.ndarray:
    """Sharpened self-training target: p_ij propto q_ij^2 / column mass.

    Pure numpy; no gradient ever flows through the target.
    """
    q = q.values if isinstance(q, SoftAssignment) else np.asarray(q, dtype=np.float64)
    weight = q**2 / q.sum(axis=0)
    return weight / weight.sum(axis=1, keepdims=True)


def loss_cls(p, q, mask=None) -> Tensor:
    """KL(P || Q) summed over rows, 0*log(0) treated as 0; gradient reaches
    only the soft assignment."""
    q = q.q if isinstance(q, SoftAssignment) else nm.as_tensor(q)
    p = np.asarray(p, dtype=np.float64)
    if p.shape != q.shape:
        raise nm.ShapeMismatchError(f"loss_cls: target {p.shape} vs assignment {q.shape}")
    if mask is not None:
        idx = np.asarray(mask, dtype=np.intp)
        p = p[idx]
        q = nm.index_rows(q, idx)
    with np.errstate(divide="ignore", invalid="ignore"):
        p_log_p = float(np.sum(np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)))
    cross = (nm.as_tensor(p) * nm.log(q)).sum()
    return p_log_p - cross


def masked_total(
    rec: Tensor | None,
    zinb: Tensor | None,
    cls: Tensor | None,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[Tensor, LossBreakdown]:
    """Weighted objective plus a float breakdown whose total matches the
    optimized scalar exactly (same additions, same order)."""
    w_rec, w_zinb, w_cls = weights
    zero = nm.Tensor(0.0)
    rec_term = w_rec * rec if rec is not None else zero
    zinb_term = w_zinb * zinb if zinb is not None else zero
    cls_term = w_cls * cls if cls is not None else zero
    total = rec_term + zinb_term + cls_term
    breakdown = LossBreakdown(
        rec=float(rec_term.values), zinb=float(zinb_term.values), cls=float(cls_term.values)
    )
    return total, breakdown
