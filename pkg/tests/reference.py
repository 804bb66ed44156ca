"""Plain diffusion LMS written node by node, independent of the package engine."""
import numpy as np


def diffusion_lms(A, mu, regressors, measurements, mode):
    """
    Classic ATC / CTA diffusion LMS with full, noiseless exchange.

    Parameters
    ----------
    A : (N, N) array, column k holds node k's weights on its neighbors.
    mu : (N,) step sizes.
    regressors : (T, N, M); measurements : (T, N).
    mode : "atc" or "cta".

    Returns
    -------
    (T, N, M) estimates after each iteration, starting from zero.
    """
    T, N, M = regressors.shape
    w = [np.zeros(M) for _ in range(N)]
    out = np.empty((T, N, M))
    for i in range(T):
        if mode == "cta":
            phi = [sum(A[l, k] * w[l] for l in range(N)) for k in range(N)]
        else:
            phi = w
        psi = []
        for k in range(N):
            u, d = regressors[i, k], measurements[i, k]
            psi.append(phi[k] + mu[k] * u * (d - u @ phi[k]))
        if mode == "atc":
            w = [sum(A[l, k] * psi[l] for l in range(N)) for k in range(N)]
        else:
            w = psi
        out[i] = np.array(w)
    return out
