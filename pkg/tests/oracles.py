"""Brute-force reference computations shared by unit and acceptance tests."""

import numpy as np

from uav_scc.dynamics import psd_factor
from uav_scc.positioning import UeGeometry, ils_estimate_batch


def rollout_second_moments(model, K, last_xhat, R_old, R_now, dtc, n, rng):
    """Empirical second moments about the origin of the next state, CL and OL."""
    x_cl, x_ol = rollout_states(model, K, last_xhat, R_old, R_now, dtc, n, rng)
    return x_cl.T @ x_cl / n, x_ol.T @ x_ol / n


def moment_zscores(samples, ref):
    """Entrywise z-scores of the empirical second moment against ``ref``."""
    prods = samples[:, :, None] * samples[:, None, :]
    se = prods.std(axis=0) / np.sqrt(len(samples))
    return (prods.mean(axis=0) - ref) / np.maximum(se, 1e-15)


def rollout_states(model, K, last_xhat, R_old, R_now, dtc, n, rng):
    """Sample the true loop from the slot of the last estimate.

    The state at that slot is ``last_xhat - eta0``; ``dtc - 1`` open-loop slots
    follow with ``u = K Ac^k last_xhat``, then the current slot is closed
    either with a fresh estimate (CL) or with the prediction (OL). Returns
    next-state samples ``(x_cl, x_ol)``, each (n, 6).
    """
    A, B = model.A, model.B
    Ac = A + B @ K
    Lw = psd_factor(model.Qw)
    x = last_xhat[None, :] - rng.standard_normal((n, 6)) @ psd_factor(R_old).T
    pred = np.array(last_xhat, float)
    for _ in range(dtc):
        # the slot of the estimate uses it directly (CL); later ones predict
        x = x @ A.T + (K @ pred) @ B.T + rng.standard_normal((n, 6)) @ Lw.T
        pred = Ac @ pred
    # x is now the current state, pred = Ac^dtc last_xhat
    w = rng.standard_normal((n, 6)) @ Lw.T
    x_ol = x @ A.T + (K @ pred) @ B.T + w
    xhat_now = x + rng.standard_normal((n, 6)) @ psd_factor(R_now).T
    x_cl = x @ A.T + xhat_now @ K.T @ B.T + w
    return x_cl, x_ol


def empirical_ue_mse(geom: UeGeometry, qdq, sigma2_r, trials, rng):
    """Mean squared ILS error with UAVs displaced by zero-mean N(0, qdq_j)."""
    hps = geom.serving_hps
    N = hps.shape[0]
    disp = np.stack([rng.standard_normal((trials, 2)) @ psd_factor(qdq[j]).T for j in range(N)], axis=1)
    q = hps[None] + disp
    diff = geom.p[None, None, :] - q
    r = np.sqrt(np.sum(diff**2, axis=2) + geom.h_v**2) + np.sqrt(sigma2_r) * rng.standard_normal((trials, N))
    est = ils_estimate_batch(r, np.broadcast_to(hps, (trials, N, 2)), geom.h_v,
                             np.broadcast_to(hps.mean(axis=0), (trials, 2)))
    return float(np.mean(np.sum((est - geom.p) ** 2, axis=1)))


def random_psd(rng, scale):
    M = rng.standard_normal((2, 2))
    return scale * (M @ M.T)


def random_prop1_instance(rng):
    """Random UE geometry, mode covariances, CL probabilities and budget."""
    while True:
        hps = rng.uniform(-1000, 1000, size=(3, 2))
        p = rng.uniform(-500, 500, size=2)
        try:
            geom = UeGeometry.at(p, hps, 50.0)
        except Exception:
            continue
        if np.linalg.cond(geom.P_mat) < 1e6:
            break
    qcl = np.stack([random_psd(rng, rng.uniform(0.1, 5)) for _ in range(3)])
    qol = np.stack([random_psd(rng, rng.uniform(1, 50)) for _ in range(3)])
    p_cl = rng.uniform(0, 1, size=3)
    d = p_cl * np.einsum("ni,nij,nj->n", geom.H, qcl, geom.H) + (1 - p_cl) * np.einsum(
        "ni,nij,nj->n", geom.H, qol, geom.H)
    budget = float(d.max() * rng.uniform(0.7, 1.6))
    return geom, p_cl, qcl, qol, budget
