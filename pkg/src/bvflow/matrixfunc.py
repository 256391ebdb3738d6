"""Dense matrix exponential, logarithm and their Fréchet derivatives.

expm uses Padé-13 scaling and squaring; logm uses inverse scaling and
squaring (Denman-Beavers square roots, then a Padé-free Gregory series).
Both are only needed for moderate matrices (ambient group sizes), and the
logarithm additionally assumes the argument is inside the chart ball.
"""

from __future__ import annotations

import numpy as np

from .errors import ChartError, ConditioningError

_PADE13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
])


def expm(A: np.ndarray) -> np.ndarray:
    """Matrix exponential by Padé-13 with scaling and squaring."""
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    norm = np.linalg.norm(A, 1) if A.ndim == 2 else np.max(np.abs(A))
    s = max(0, int(np.ceil(np.log2(max(norm, 1e-300) / 5.371920351148152))))
    As = A / (2.0**s)
    ident = np.eye(n)
    A2 = As @ As
    A4 = A2 @ A2
    A6 = A4 @ A2
    b = _PADE13
    U = As @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
              + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def expm_batch(A: np.ndarray) -> np.ndarray:
    """expm along the leading axis (plain loop; batches are small)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        return expm(A)
    out = np.empty_like(A)
    for k in range(A.shape[0]):
        out[k] = expm(A[k])
    return out


def _sqrtm_db(G: np.ndarray, iters: int = 60) -> np.ndarray:
    """Principal square root by the Denman-Beavers iteration."""
    Y = G
    Z = np.eye(G.shape[-1])
    for _ in range(iters):
        Yn = 0.5 * (Y + np.linalg.inv(Z))
        Zn = 0.5 * (Z + np.linalg.inv(Y))
        if np.linalg.norm(Yn - Y, "fro") <= 1e-16 * np.linalg.norm(Y, "fro"):
            return Yn
        Y, Z = Yn, Zn
    return Y


def logm(G: np.ndarray, radius: float = None) -> np.ndarray:
    """Principal logarithm via inverse scaling and squaring.

    Intended for matrices near the identity; ``radius`` (Frobenius
    distance to the identity) guards the chart domain.
    """
    G = np.asarray(G, dtype=float)
    n = G.shape[-1]
    ident = np.eye(n)
    dist = np.linalg.norm(G - ident, "fro")
    if radius is not None and dist >= radius:
        raise ChartError(
            f"matrix is outside the log chart: ‖G − I‖_F = {dist:.4g} ≥ {radius:.4g}"
        )
    X = G
    s = 0
    while np.linalg.norm(X - ident, "fro") > 0.12 and s < 40:
        X = _sqrtm_db(X)
        s += 1
    Y = X - ident
    term = Y.copy()
    out = Y.copy()
    sign = -1.0
    for k in range(2, 40):
        term = term @ Y
        out = out + sign * term / k
        sign = -sign
        if np.linalg.norm(term, "fro") / k < 1e-18 * max(1.0, np.linalg.norm(out, "fro")):
            break
    return out * (2.0**s)


def logm_batch(G: np.ndarray, radius: float = None) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.ndim == 2:
        return logm(G, radius)
    out = np.empty_like(G)
    for k in range(G.shape[0]):
        out[k] = logm(G[k], radius)
    return out


def expm_frechet(X: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Directional derivative of expm at X in direction E (block trick)."""
    n = X.shape[-1]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = X
    block[:n, n:] = E
    block[n:, n:] = X
    return expm(block)[:n, n:]


def logm_frechet(G: np.ndarray, V: np.ndarray, radius: float = None) -> np.ndarray:
    """Directional derivative of logm at G: inverse of expm_frechet at log G."""
    n = G.shape[-1]
    X = logm(G, radius)
    cols = np.empty((n * n, n * n))
    basis = np.eye(n * n).reshape(n * n, n, n)
    for j in range(n * n):
        cols[:, j] = expm_frechet(X, basis[j]).ravel()
    try:
        w = np.linalg.solve(cols, np.asarray(V, dtype=float).ravel())
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("derivative of expm is singular at this point") from exc
    return w.reshape(n, n)
