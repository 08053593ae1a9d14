"""Online drag learning with the recursive GP, against a batch sparse GP.

Noisy samples of a quadratic drag curve arrive one at a time; the recursive
posterior over 20 basis velocities is compared with the batch fit on the
same data.
"""

import numpy as np

from quadrgp.rgp import KernelHyperparams, batch_gp_fit, rgp_infer, rgp_init_dim, rgp_update

rng = np.random.default_rng(0)
v_max = 10.0
true = lambda v: -0.05 * v * np.abs(v)  # noqa: E731

state = rgp_init_dim(v_max, 20, KernelHyperparams(sigma_f=2.0, l=4.0, sigma_n=0.05))
v_all = rng.uniform(-v_max, v_max, 400)
a_all = true(v_all) + rng.normal(0.0, 0.05, v_all.size)

query = np.linspace(-8, 8, 9)
print("n_obs  max|mu - truth| on |v| <= 8   mean posterior std")
for n, (v, a) in enumerate(zip(v_all, a_all), start=1):
    state = rgp_update(state, v, a)
    if n in (1, 10, 50, 100, 400):
        mu, var = rgp_infer(state, query)
        print(f"{n:5d}  {np.max(np.abs(mu - true(query))):.4f}                      {np.mean(np.sqrt(var)):.4f}")

batch = batch_gp_fit(np.c_[v_all, a_all], 20)
mu_b, _ = rgp_infer(batch, query)
mu_r, _ = rgp_infer(state, query)
print(f"\nbatch fit hyperparameters: {batch.hyper}")
print("    v    truth   recursive   batch")
for v, t, r, b in zip(query, true(query), mu_r, mu_b):
    print(f"{v:5.1f}  {t:7.3f}  {r:9.3f}  {b:7.3f}")
