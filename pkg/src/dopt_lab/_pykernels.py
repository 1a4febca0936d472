"""Numpy implementations of the batch kernels (fallback for the Cython build).

Operation order matches ``_ckernels.pyx`` exactly so both backends return
bitwise-identical arrays.
"""
import numpy as np


def simulate(p0_cdf, pi_cdf, p_cdf, uniforms):
    """Inverse-CDF sampling of a batch of trajectories.

    Returns ``states`` of shape (N, T+1) and ``actions`` of shape (N, T).
    """
    n = uniforms.shape[0]
    horizon = pi_cdf.shape[0]
    states = np.empty((n, horizon + 1), dtype=np.int64)
    actions = np.empty((n, horizon), dtype=np.int64)
    s = np.argmax(uniforms[:, 0, None] < p0_cdf[None, :], axis=1)
    states[:, 0] = s
    for t in range(horizon):
        a = np.argmax(uniforms[:, 1 + 2 * t, None] < pi_cdf[t, s], axis=1)
        s = np.argmax(uniforms[:, 2 + 2 * t, None] < p_cdf[s, a], axis=1)
        actions[:, t] = a
        states[:, t + 1] = s
    return states, actions


def returns(states, actions, reward, ratio, baseline, baseline_bar):
    """Backward recursion ``g <- rho_t (r_t + g - b_t) + bbar_t`` per trajectory."""
    n, horizon = actions.shape
    g = np.zeros(n)
    for t in range(horizon - 1, -1, -1):
        s = states[:, t]
        a = actions[:, t]
        g = ratio[t, s, a] * (reward[s, a] + g - baseline[t, s, a]) + baseline_bar[t, s]
    return g
