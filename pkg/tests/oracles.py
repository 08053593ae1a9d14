"""Independent reference computations used by the test-suite.

Nothing here calls into the routines under test for the quantity being
checked: rotations come from scipy, the basis posterior from the closed-form
batch GP, QPs from bounded least squares, sensitivities from finite
differences, and the OCP optimum from a generic bounded optimizer.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.transform import Rotation


def rotation_oracle(q) -> np.ndarray:
    """Rotation matrix of a scalar-first unit quaternion via scipy."""
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def se_kernel(a, b, sigma_f, l, sigma_n):
    """Squared-exponential Gram matrix; noise on exactly coincident inputs."""
    a = np.asarray(a, float)[:, None]
    b = np.asarray(b, float)[None, :]
    K = sigma_f**2 * np.exp(-0.5 * (a - b) ** 2 / l)
    return K + sigma_n**2 * (a == b)


def batch_basis_posterior(basis, obs_idx, y, sigma_f, l, sigma_n):
    """Posterior over the function values at ``basis`` given observations
    ``y[j] = g[obs_idx[j]] + noise`` with prior covariance ``k(basis, basis)``.

    Direct batch formula: mean = K P' (P K P' + s2 I)^-1 y and
    cov = K - K P' (P K P' + s2 I)^-1 P K.
    """
    K = se_kernel(basis, basis, sigma_f, l, sigma_n)
    P = np.zeros((len(obs_idx), len(basis)))
    P[np.arange(len(obs_idx)), obs_idx] = 1.0
    S = P @ K @ P.T + sigma_n**2 * np.eye(len(obs_idx))
    KPt = K @ P.T
    mean = KPt @ np.linalg.solve(S, y)
    cov = K - KPt @ np.linalg.solve(S, KPt.T)
    return mean, cov


def box_qp_reference(H, g, lb, ub):
    """Minimize ``0.5 x'Hx + g'x`` on a box via bounded-variable least squares.

    With ``H = L L'`` the objective equals ``0.5 |L'x + L^-1 g|^2`` up to a
    constant.
    """
    L = linalg.cholesky(H, lower=True)
    A = L.T
    b = -linalg.solve_triangular(L, g, lower=True)
    res = optimize.lsq_linear(A, b, bounds=(lb, ub), method="bvls", tol=1e-14, lsmr_tol=None)
    return res.x


def qp_objective(H, g, x):
    return 0.5 * x @ H @ x + g @ x


def central_difference(fun, x, h=1e-6):
    """Jacobian of ``fun`` at ``x`` by central differences (columns = inputs)."""
    x = np.asarray(x, float)
    cols = []
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def rk4_plain(f, x, u, dt, n):
    """Classical RK4, ``n`` substeps, no renormalization."""
    h = dt / n
    for _ in range(n):
        k1 = f(x, u)
        k2 = f(x + 0.5 * h * k1, u)
        k3 = f(x + 0.5 * h * k2, u)
        k4 = f(x + h * k3, u)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def _quat_mul(a, b):
    aw, av = a[0], a[1:]
    bw, bv = b[0], b[1:]
    return np.concatenate([[aw * bw - av @ bv], aw * bv + bw * av + np.cross(av, bv)])


def ocp_cost_oracle(u_flat, x0, x_ref, u_ref, field, T_h, n_substeps, Q, R):
    """Single-shooting tracking cost with the same error definition as the OCP."""
    n = len(u_ref) - 1
    U = u_flat.reshape(n, 4)
    x = np.asarray(x0, float)
    J = 0.0
    for i in range(n):
        x = rk4_plain(field, x, U[i], T_h, n_substeps)
        qc = x_ref[i + 1, 3:7] * np.array([1, -1, -1, -1])
        e = np.concatenate([x[0:3] - x_ref[i + 1, 0:3], 2 * _quat_mul(qc, x[3:7])[1:], x[7:13] - x_ref[i + 1, 7:13]])
        J += e @ (Q * e)
    du = U - u_ref[:n]
    return J + np.sum(R * du * du)


def ocp_reference_solution(x0, x_ref, u_ref, field, T_h, n_substeps, Q, R, u0):
    """Fully converged solution of the OCP by bounded quasi-Newton."""
    res = optimize.minimize(
        ocp_cost_oracle,
        np.asarray(u0, float).reshape(-1),
        args=(x0, x_ref, u_ref, field, T_h, n_substeps, Q, R),
        method="L-BFGS-B",
        bounds=[(0.0, 1.0)] * u0.size,
        options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 5000, "maxfun": 200000},
    )
    return res.x.reshape(-1, 4), res.fun
