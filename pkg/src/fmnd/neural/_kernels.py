"""Compiled backward recursion of the peephole LSTM.

The forward pass stays in numpy, whose vectorized tanh beats scalar libm
calls here; the backward recursion has no transcendentals and compiles well.
``G`` holds activated gates gate-major ``(T, 4, B, H)``; ``dZ`` receives
pre-activation gradients as ``(T, B, 4H)``.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def backward_loop(G, C, TC, c0, dHs, W_h, w_ci, w_cf, w_co, dZ):
    T, _, B, H = G.shape
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dz = dZ[t]
        c_prev = C[t - 1] if t > 0 else c0
        for b in range(B):
            for k in range(H):
                i = G[t, 0, b, k]
                f = G[t, 1, b, k]
                g = G[t, 2, b, k]
                o = G[t, 3, b, k]
                tc = TC[t, b, k]
                dh = dHs[t, b, k] + dh_next[b, k]
                dao = dh * tc * o * (1.0 - o)
                dc = dc_next[b, k] + dh * o * (1.0 - tc * tc) + dao * w_co[k]
                dai = dc * g * i * (1.0 - i)
                daf = dc * c_prev[b, k] * f * (1.0 - f)
                dz[b, k] = dai
                dz[b, H + k] = daf
                dz[b, 2 * H + k] = dc * i * (1.0 - g * g)
                dz[b, 3 * H + k] = dao
                dc_next[b, k] = dc * f + dai * w_ci[k] + daf * w_cf[k]
        dh_next = np.dot(dz, W_h)
    return dh_next, dc_next
