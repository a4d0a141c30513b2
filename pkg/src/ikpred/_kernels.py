"""Compiled fitness kernel for the schedule optimizer.

Same recursion as predictor.run_covariance / objective, specialized for
mass evaluation: prior covariance P(t|t-1) propagated over the horizon
with the covariance-form measurement update (valid for any PSD P), and
Tr[C P C^T] accumulated for t = t0+1 .. T. The hot time-update loop is
written allocation-free; the measurement update runs only N times per
call, so its temporaries do not matter.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def objective_kernel(A, W, C, R, P0, measured, t0):
    n = A.shape[0]
    m = C.shape[0]
    T = measured.shape[0]
    P = P0.copy()
    AP = np.empty((n, n))
    acc = 0.0
    for t in range(T + 1):
        if t > t0:
            for i in range(m):
                s = 0.0
                for j in range(n):
                    cij = C[i, j]
                    if cij != 0.0:
                        for k in range(n):
                            s += cij * P[j, k] * C[i, k]
                acc += s
        if t == T:
            break
        if measured[t]:
            PCt = np.empty((n, m))
            for i in range(n):
                for q in range(m):
                    s = 0.0
                    for j in range(n):
                        s += P[i, j] * C[q, j]
                    PCt[i, q] = s
            S = np.empty((m, m))
            for q in range(m):
                for r in range(m):
                    s = R[q, r]
                    for i in range(n):
                        s += C[q, i] * PCt[i, r]
                    S[q, r] = s
            Sinv = np.linalg.inv(S)
            KS = PCt @ Sinv
            for i in range(n):
                for j in range(i, n):
                    s = 0.0
                    for q in range(m):
                        s += KS[i, q] * PCt[j, q]
                    v = P[i, j] - s
                    P[i, j] = v
                    P[j, i] = v
        for i in range(n):
            for j in range(n):
                s = 0.0
                for k in range(n):
                    s += A[i, k] * P[k, j]
                AP[i, j] = s
        for i in range(n):
            for j in range(i, n):
                s = W[i, j]
                for k in range(n):
                    s += AP[i, k] * A[j, k]
                P[i, j] = s
                P[j, i] = s
    return acc
