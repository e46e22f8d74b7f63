"""Brute-force reference computations shared by several test modules."""
import numpy as np


def enumerate_best_response(L, M, threshold, s, chunk=1 << 16):
    """Maximum epoch-average payoff over every deterministic policy on (slot, idle count).

    The idle count is kept exact (no saturation). Transmitting in a slot earns
    s and leaves the count unchanged; waiting makes the slot idle with
    probability s. The review is punished iff the final count <= threshold.
    """
    n_bits = L * (L + 1) // 2
    best = -np.inf
    for start in range(0, 1 << n_bits, chunk):
        ids = np.arange(start, min(start + chunk, 1 << n_bits), dtype=np.int64)
        dist = np.zeros((ids.size, L + 1))
        dist[:, 0] = 1.0
        reward = np.zeros(ids.size)
        for j in range(L):
            new = np.zeros_like(dist)
            for c in range(j + 1):
                bit = j * (j + 1) // 2 + c
                send = ((ids >> bit) & 1).astype(bool)
                mass = dist[:, c]
                reward += np.where(send, mass * s, 0.0)
                new[:, c] += np.where(send, mass, mass * (1.0 - s))
                new[:, c + 1] += np.where(send, 0.0, mass * s)
            dist = new
        punish = dist[:, : max(0, min(threshold, L) + 1)].sum(axis=1) if threshold >= 0 else 0.0
        best = max(best, float(np.max(reward / (L + M * punish))))
    return best
