"""Physics model augmented with the learned drag mean."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import (
    NU,
    NX,
    Q_SLICE,
    V_SLICE,
    ConfigurationError,
    QuadParams,
    QuadState,
    f_phys,
    physics_batch,
    physics_jacobian,
    rotation_matrix,
    rotation_matrix_grad,
)
from .rgp import KernelHyperparams, RgpEnsemble, kernel_row_smooth


@dataclass(frozen=True)
class RgpParamVector:
    """Per-axis basis locations and means, enough to evaluate the drag mean.

    ``alpha`` caches ``K^-1 mean`` so evaluating the mean inside the
    optimizer is a single kernel row product.
    """

    basis_v: np.ndarray  # (3, m)
    mean: np.ndarray  # (3, m)
    alpha: np.ndarray  # (3, m)
    hypers: tuple[KernelHyperparams, KernelHyperparams, KernelHyperparams]
    digest: str = ""

    def __post_init__(self):
        for name in ("basis_v", "mean", "alpha"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.basis_v.ndim != 2 or self.basis_v.shape[0] != 3:
            raise ConfigurationError("basis_v must have shape (3, m)")
        if self.mean.shape != self.basis_v.shape or self.alpha.shape != self.basis_v.shape:
            raise ConfigurationError("mean and alpha must match the basis shape")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.alpha))):
            raise ConfigurationError("parameter vector must be finite")

    @property
    def m(self) -> int:
        return self.basis_v.shape[1]

    @classmethod
    def from_ensemble(cls, ens: RgpEnsemble) -> "RgpParamVector":
        return cls(
            basis_v=np.stack([d.basis_v for d in ens.dims]),
            mean=ens.means(),
            alpha=np.stack([d.alpha for d in ens.dims]),
            hypers=tuple(d.hyper for d in ens.dims),
            digest=ens.digest(),
        )

    @classmethod
    def zeros(cls, v_max: float = 1.0, m: int = 20, hyper: KernelHyperparams | None = None) -> "RgpParamVector":
        hyper = hyper or KernelHyperparams()
        basis = np.tile(np.linspace(-v_max, v_max, m), (3, 1))
        return cls(basis, np.zeros((3, m)), np.zeros((3, m)), (hyper,) * 3, digest="zero")

    def is_zero(self) -> bool:
        return not np.any(self.alpha)


def drag_mean_batch(v_B: np.ndarray, rp: RgpParamVector) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean per axis at body velocities ``v_B`` (N, 3) and its derivative."""
    mu = np.empty_like(v_B)
    dmu = np.empty_like(v_B)
    for d in range(3):
        h = rp.hypers[d]
        k, dk = kernel_row_smooth(v_B[:, d], rp.basis_v[d], h)
        at_basis = v_B[:, d, None] == rp.basis_v[d]
        mu[:, d] = k @ rp.alpha[d] + h.sigma_n**2 * (at_basis @ rp.alpha[d])
        dmu[:, d] = dk @ rp.alpha[d]
    return mu, dmu


def rgp_batch(X: np.ndarray, rp: RgpParamVector) -> np.ndarray:
    out = np.zeros_like(X)
    if rp.is_zero():
        return out
    R = rotation_matrix(X[:, Q_SLICE])
    v_B = np.einsum("nji,nj->ni", R, X[:, V_SLICE])
    mu, _ = drag_mean_batch(v_B, rp)
    out[:, V_SLICE] = np.einsum("nij,nj->ni", R, mu)
    return out


def rgp_jacobian(X: np.ndarray, rp: RgpParamVector) -> np.ndarray:
    n = X.shape[0]
    Fx = np.zeros((n, NX, NX))
    if rp.is_zero():
        return Fx
    q = X[:, Q_SLICE]
    v = X[:, V_SLICE]
    R = rotation_matrix(q)
    dR = rotation_matrix_grad(q)  # (n, 4, 3, 3)
    v_B = np.einsum("nji,nj->ni", R, v)
    mu, dmu = drag_mean_batch(v_B, rp)
    RD = R * dmu[:, None, :]
    Fx[:, V_SLICE, V_SLICE] = RD @ np.transpose(R, (0, 2, 1))
    dvB_dq = np.einsum("nkji,nj->nik", dR, v)  # d(R^T v)/dq, (n, 3, 4)
    Fx[:, V_SLICE, Q_SLICE] = np.einsum("nkij,nj->nik", dR, mu) + RD @ dvB_dq
    return Fx


def pred_batch(X, U, qp: QuadParams, rp: RgpParamVector) -> np.ndarray:
    return physics_batch(X, U, qp) + rgp_batch(X, rp)


def pred_jacobian(X, U, qp: QuadParams, rp: RgpParamVector):
    Fx, Fu = physics_jacobian(X, U, qp)
    return Fx + rgp_jacobian(X, rp), Fu


def f_rgp(x: QuadState, params: RgpParamVector) -> np.ndarray:
    """Derivative contribution of the learned drag; only the velocity slots are nonzero."""
    return rgp_batch(x.as_vector()[None], params)[0]


def f_pred(x: QuadState, u, qp: QuadParams, rp: RgpParamVector) -> np.ndarray:
    """Physics derivative plus the learned drag contribution."""
    return f_phys(x, u, qp) + f_rgp(x, rp)


def pred_field(qp: QuadParams, rp: RgpParamVector):
    def f(x, u):
        return pred_batch(x[None], np.asarray(u)[None], qp, rp)[0]

    return f

