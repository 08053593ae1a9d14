"""Recursive Gaussian process regression over one-dimensional inputs.

Each axis of the drag model is a scalar GP from body velocity to drag
acceleration.  The recursive variant keeps a Gaussian belief over the
function values at a fixed set of basis velocities and folds observations in
one at a time with a Kalman-style gain.  A batch sparse GP with
maximum-likelihood hyperparameters is provided for the pre-trained
baseline; it produces the same state type so the two are interchangeable
downstream.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

from .dynamics import ConfigurationError

NOISE_FLOOR = 1e-4
JITTER = 1e-10


class NumericalDegeneracyError(ArithmeticError):
    pass


@dataclass(frozen=True)
class KernelHyperparams:
    """Squared-exponential kernel ``sigma_f^2 exp(-(x - x')^2 / (2 l))``.

    Note that ``l`` divides the squared distance directly.  ``sigma_n^2`` is
    added only where the two inputs are the same sample.
    """

    sigma_f: float = 1.0
    l: float = 0.1
    sigma_n: float = 0.1

    def __post_init__(self):
        if not (self.sigma_f > 0 and self.l > 0 and self.sigma_n > 0):
            raise ConfigurationError(f"kernel hyperparameters must be positive: {self}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.sigma_f, self.l, self.sigma_n)


def kernel(x, x2, hyper: KernelHyperparams):
    """Kernel evaluated elementwise over broadcast ``x`` and ``x2``."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    d = x - x2
    k = hyper.sigma_f**2 * np.exp(-0.5 * d * d / hyper.l)
    return k + np.where(d == 0.0, hyper.sigma_n**2, 0.0)


def kernel_matrix(a, b, hyper: KernelHyperparams) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    return kernel(a[:, None], b[None, :], hyper)


def kernel_row_smooth(v, basis, hyper: KernelHyperparams) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free kernel row ``k(v, basis)`` and its derivative in ``v``.

    ``v`` may have any shape; the basis axis is appended last.
    """
    d = np.asarray(v, dtype=float)[..., None] - basis
    k = hyper.sigma_f**2 * np.exp(-0.5 * d * d / hyper.l)
    return k, -d / hyper.l * k


def _inverse_spd(K: np.ndarray) -> np.ndarray:
    try:
        c = linalg.cho_factor(K, lower=True)
    except linalg.LinAlgError:
        c = linalg.cho_factor(K + JITTER * np.eye(len(K)), lower=True)
    Kinv = linalg.cho_solve(c, np.eye(len(K)))
    return 0.5 * (Kinv + Kinv.T)


@dataclass(frozen=True)
class RgpDimState:
    basis_v: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    hyper: KernelHyperparams
    K_basis_inv: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        basis = np.asarray(self.basis_v, dtype=float)
        if basis.ndim != 1 or len(basis) < 2 or np.any(np.diff(basis) <= 0):
            raise ConfigurationError("basis velocities must be a strictly increasing vector of length >= 2")
        object.__setattr__(self, "basis_v", basis)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        if self.K_basis_inv is None:
            object.__setattr__(self, "K_basis_inv", _inverse_spd(kernel_matrix(basis, basis, self.hyper)))

    @property
    def m(self) -> int:
        return len(self.basis_v)

    @property
    def alpha(self) -> np.ndarray:
        """Weights ``K^-1 mu`` so that the posterior mean is ``k(v, V) @ alpha``."""
        return self.K_basis_inv @ self.mean


@dataclass(frozen=True)
class RgpEnsemble:
    dims: tuple[RgpDimState, RgpDimState, RgpDimState]

    def __post_init__(self):
        if len(self.dims) != 3:
            raise ConfigurationError("an ensemble holds exactly three axes")
        object.__setattr__(self, "dims", tuple(self.dims))

    def means(self) -> np.ndarray:
        return np.stack([d.mean for d in self.dims])

    def digest(self) -> str:
        """Short content hash of the basis means, used to trace parameter hand-off."""
        h = hashlib.sha1()
        for d in self.dims:
            h.update(np.ascontiguousarray(d.mean).tobytes())
        return h.hexdigest()[:12]


@dataclass(frozen=True)
class DragObservation:
    v_B: np.ndarray
    a_tilde: np.ndarray
    t: float = 0.0


def rgp_init_dim(v_max: float, m: int, hyper: KernelHyperparams) -> RgpDimState:
    if m < 2:
        raise ConfigurationError("at least two basis points are required")
    if v_max <= 0:
        raise ConfigurationError("v_max must be positive")
    basis = np.linspace(-v_max, v_max, m)
    K = kernel_matrix(basis, basis, hyper)
    return RgpDimState(basis, np.zeros(m), K.copy(), hyper, _inverse_spd(K))


def rgp_init(v_max: float, m: int, hyper: KernelHyperparams | tuple | None = None) -> RgpEnsemble:
    """Fresh ensemble with ``m`` equidistant basis points on ``[-v_max, v_max]``."""
    if hyper is None:
        hyper = KernelHyperparams()
    hypers = hyper if isinstance(hyper, tuple) else (hyper,) * 3
    return RgpEnsemble(tuple(rgp_init_dim(v_max, m, h) for h in hypers))


def rgp_update(state: RgpDimState, v_obs: float, a_obs: float) -> RgpDimState:
    """Fold one scalar observation into the basis posterior."""
    hyper = state.hyper
    k_vb = kernel(v_obs, state.basis_v, hyper)
    J = k_vb @ state.K_basis_inv
    b = (hyper.sigma_f**2 + hyper.sigma_n**2) - J @ k_vb
    CJ = state.cov @ J
    S = b + J @ CJ + hyper.sigma_n**2
    if not S > 0:
        raise NumericalDegeneracyError(f"innovation variance {S} is not positive")
    G = CJ / S
    mean = state.mean + G * (a_obs - J @ state.mean)
    cov = state.cov - S * np.outer(G, G)
    cov = 0.5 * (cov + cov.T)
    return replace(state, mean=mean, cov=cov)


def rgp_infer(state: RgpDimState, v_query):
    """Posterior mean and variance at ``v_query`` (scalar or array)."""
    hyper = state.hyper
    v = np.asarray(v_query, dtype=float)
    k_qb = kernel(v[..., None], state.basis_v, hyper)
    H = k_qb @ state.K_basis_inv
    mu = H @ state.mean
    var = (
        (hyper.sigma_f**2 + hyper.sigma_n**2)
        - np.sum(H * k_qb, axis=-1)
        + np.einsum("...i,ij,...j->...", H, state.cov, H)
    )
    var = np.maximum(var, 0.0)
    if v.ndim == 0:
        return float(mu), float(var)
    return mu, var


def ensemble_infer(ens: RgpEnsemble, v_B) -> np.ndarray:
    v_B = np.asarray(v_B, dtype=float)
    return np.array([rgp_infer(d, v_B[i])[0] for i, d in enumerate(ens.dims)])


def ensemble_update(ens: RgpEnsemble, obs: DragObservation) -> RgpEnsemble:
    return RgpEnsemble(tuple(rgp_update(d, obs.v_B[i], obs.a_tilde[i]) for i, d in enumerate(ens.dims)))


# ---------------------------------------------------------------------------
# Batch sparse GP (pre-trained baseline)
# ---------------------------------------------------------------------------

def farthest_point_selection(x, m: int) -> np.ndarray:
    """Greedy maximin selection of ``m`` values from ``x``, returned sorted."""
    x = np.asarray(x, dtype=float)
    start = int(np.argmax(np.abs(x - x.mean())))
    chosen = [start]
    dist = np.abs(x - x[start])
    for _ in range(m - 1):
        nxt = int(np.argmax(dist))
        if dist[nxt] == 0.0:
            raise ConfigurationError(f"data holds fewer than {m} distinct inputs")
        chosen.append(nxt)
        dist = np.minimum(dist, np.abs(x - x[nxt]))
    return np.sort(x[chosen])


def log_marginal_likelihood(x, y, hyper: KernelHyperparams) -> float:
    K = kernel_matrix(x, x, hyper)
    try:
        L = linalg.cholesky(K + JITTER * np.eye(len(x)), lower=True)
    except linalg.LinAlgError:
        return -np.inf
    alpha = linalg.cho_solve((L, True), y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(x) * np.log(2 * np.pi))


def optimize_hyperparams(x, y, hyper_init: KernelHyperparams, max_points: int = 400) -> KernelHyperparams:
    """Maximize the exact log marginal likelihood on an evenly strided subsample."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) > max_points:
        idx = np.linspace(0, len(x) - 1, max_points).round().astype(int)
        x, y = x[idx], y[idx]

    def neg_lml(theta):
        sf, l, sn = np.exp(theta)
        val = log_marginal_likelihood(x, y, KernelHyperparams(sf, l, sn))
        return 1e10 if not np.isfinite(val) else -val

    theta0 = np.log(np.maximum(hyper_init.as_tuple(), [1e-6, 1e-6, NOISE_FLOOR]))
    bounds = [(np.log(1e-4), np.log(1e3)), (np.log(1e-4), np.log(1e4)), (np.log(NOISE_FLOOR), np.log(1e2))]
    res = optimize.minimize(neg_lml, theta0, method="L-BFGS-B", bounds=bounds)
    if not res.success:
        warnings.warn(f"hyperparameter optimization did not converge: {res.message}", RuntimeWarning)
    theta = res.x if res.fun <= neg_lml(theta0) else theta0
    sf, l, sn = np.exp(theta)
    return KernelHyperparams(float(sf), float(l), float(max(sn, NOISE_FLOOR)))


def sparse_posterior(basis, x, y, hyper: KernelHyperparams) -> RgpDimState:
    """Projected-process posterior over the values at ``basis`` given all data.

    Uses the whitened form ``B = I + A A'`` with ``A = L^-1 K_mn / sigma_n``,
    which stays well conditioned when ``sigma_n`` is tiny.
    """
    basis = np.asarray(basis, dtype=float)
    y = np.asarray(y, dtype=float)
    m = len(basis)
    K_mm = kernel_matrix(basis, basis, hyper)
    K_mn = kernel_matrix(basis, x, hyper)
    try:
        L = linalg.cholesky(K_mm, lower=True)
    except linalg.LinAlgError:
        L = linalg.cholesky(K_mm + JITTER * np.eye(m), lower=True)
    A = linalg.solve_triangular(L, K_mn, lower=True) / hyper.sigma_n
    LB = linalg.cholesky(np.eye(m) + A @ A.T, lower=True)
    w = linalg.cho_solve((LB, True), A @ y) / hyper.sigma_n
    mean = L @ w
    LBinv_Lt = linalg.solve_triangular(LB, L.T, lower=True)
    cov = LBinv_Lt.T @ LBinv_Lt
    cov = 0.5 * (cov + cov.T)
    return RgpDimState(basis, mean, cov, hyper, _inverse_spd(K_mm))


def batch_gp_fit(data, m: int, hyper_init: KernelHyperparams | None = None) -> RgpDimState:
    """Fit a sparse GP to ``(v, a)`` pairs.

    Inducing inputs come from farthest-point selection, hyperparameters from
    maximum likelihood.  The result supports :func:`rgp_infer`.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ConfigurationError("data must be an (n, 2) array of (v, a) pairs")
    if len(data) < m:
        raise ConfigurationError(f"need at least m={m} observations, got {len(data)}")
    x, y = data[:, 0], data[:, 1]
    hyper = optimize_hyperparams(x, y, hyper_init or KernelHyperparams())
    basis = farthest_point_selection(x, m)
    return sparse_posterior(basis, x, y, hyper)


# ---------------------------------------------------------------------------
# Snapshot export
# ---------------------------------------------------------------------------

AXES = ("x", "y", "z")


def posterior_to_dict(ens: RgpEnsemble, observations=None) -> dict:
    """Serializable snapshot: basis, means, 2-sigma band, optional observation scatter."""
    out = {"axes": {}}
    for name, d in zip(AXES, ens.dims):
        _, var = rgp_infer(d, d.basis_v)
        entry = {
            "hyper": {"sigma_f": d.hyper.sigma_f, "l": d.hyper.l, "sigma_n": d.hyper.sigma_n},
            "basis_v": d.basis_v.tolist(),
            "mean": d.mean.tolist(),
            "cov": d.cov.tolist(),
            "band_2std": (2.0 * np.sqrt(var)).tolist(),
        }
        out["axes"][name] = entry
    if observations is not None:
        obs = np.asarray(observations, dtype=float).reshape(-1, 6)
        for i, name in enumerate(AXES):
            out["axes"][name]["observations"] = {"v": obs[:, i].tolist(), "a": obs[:, 3 + i].tolist()}
    return out


def ensemble_from_dict(d: dict) -> RgpEnsemble:
    dims = []
    for name in AXES:
        e = d["axes"][name]
        dims.append(
            RgpDimState(
                np.array(e["basis_v"]), np.array(e["mean"]), np.array(e["cov"]), KernelHyperparams(**e["hyper"])
            )
        )
    return RgpEnsemble(tuple(dims))


def save_posterior(ens: RgpEnsemble, path, observations=None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(posterior_to_dict(ens, observations), indent=1))
    return path


def load_posterior(path) -> RgpEnsemble:
    return ensemble_from_dict(json.loads(Path(path).read_text()))
