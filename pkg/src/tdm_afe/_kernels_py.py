"""Pure-Python twin of ``_kernels.pyx``; used when the extension is not built."""

import numpy as np


def run_visits(v_eff, chop, gain, d_active, d_reset, limit, b0, b1, a1, n_channels):
    n = len(v_eff)
    carry = d_reset * d_active
    keep = 1.0 - d_active
    out = [0.0] * n
    clamped = [0] * n
    z_prev = [0.0] * n_channels
    lp = [0.0] * n_channels
    m = 0.0
    vs = v_eff.tolist() if hasattr(v_eff, "tolist") else list(v_eff)
    cs = chop.tolist() if hasattr(chop, "tolist") else list(chop)
    for j in range(n):
        k = j % n_channels
        s = cs[j]
        y = s * gain * vs[j] * keep + m * carry
        if y > limit:
            y = limit
            clamped[j] = 1
        elif y < -limit:
            y = -limit
            clamped[j] = 1
        m = y
        z = s * y
        lk = b0 * z + b1 * z_prev[k] - a1 * lp[k]
        lp[k] = lk
        z_prev[k] = z
        out[j] = lk
    return np.array(out, dtype=np.float64), np.array(clamped, dtype=np.uint8)
