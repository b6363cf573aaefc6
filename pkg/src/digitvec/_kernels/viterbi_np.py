"""Pure-numpy Viterbi kernel for left-to-right, no-skip chains.

Reference implementation; the Cython extension in ``_viterbi_cy`` computes
the identical recursion and must stay bit-compatible with this module.
"""

import numpy as np

NEG_INF = -np.inf


def viterbi_path(emit, log_stay, log_adv):
    """Best state path through a left-to-right chain.

    Parameters
    ----------
    emit : (L, S) float64
        Log emission likelihood of each frame under each state.
    log_stay : (S,) float64
        Log probability of the self-loop of each state.
    log_adv : (S,) float64
        Log probability of advancing from state ``j`` to ``j+1``
        (the last entry is ignored).

    Returns
    -------
    path : (L,) int32
        State index per frame. The path starts in state 0 and ends in the
        last state; ties are broken in favour of staying.
    score : float
        Log score of the returned path, ``-inf`` if no path is feasible.
    """
    emit = np.ascontiguousarray(emit, dtype=np.float64)
    L, S = emit.shape
    if L < S:
        return np.zeros(L, dtype=np.int32), NEG_INF

    delta = np.full(S, NEG_INF)
    delta[0] = emit[0, 0]
    psi = np.zeros((L, S), dtype=np.int8)

    for t in range(1, L):
        stay = delta + log_stay
        adv = np.empty(S)
        adv[0] = NEG_INF
        adv[1:] = delta[:-1] + log_adv[:-1]
        take_adv = adv > stay
        psi[t] = take_adv
        delta = np.where(take_adv, adv, stay) + emit[t]

    score = float(delta[S - 1])
    path = np.empty(L, dtype=np.int32)
    state = S - 1
    for t in range(L - 1, 0, -1):
        path[t] = state
        if psi[t, state]:
            state -= 1
    path[0] = state
    return path, score
