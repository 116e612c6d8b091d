"""Real 4-D hyperspherical harmonics for rotation encoding.

A unit quaternion q = (w, x, y, z) is written in hyperspherical coordinates

    w = cos(psi),   (x, y, z) = sin(psi) * (sin(T)cos(F), sin(T)sin(F), cos(T))

with psi in [0, pi], polar angle T and azimuth F of the vector part. The
basis functions, indexed lexicographically by (n, l, m) with 0 <= l <= n and
-l <= m <= l, are

    Z_nlm(q) = N_nl * C_{n-l}^{(l+1)}(cos psi) * sin(psi)^l * Y_lm(T, F)

where C is a Gegenbauer polynomial, Y_lm are real orthonormal spherical
harmonics without the Condon-Shortley phase, and

    N_nl = 2^l l! sqrt( 2 (n+1) (n-l)! / (pi (n+l+1)!) ).

The family is orthonormal against the uniform (Haar) measure on the unit
3-sphere, whose total volume is 2 pi^2; the (0,0,0) member is the constant
1 / sqrt(2 pi^2). A band limit max_n gives sum_{n<=max_n} (n+1)^2 functions
(140 for max_n = 6); encodings keep the first ``dim`` of them.

Because Z_nlm(-q) = (-1)^n Z_nlm(q), encodings are only well defined on the
rotation group after picking a quaternion sign; ``encode_rotations``
canonicalizes to w >= 0 first.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError
from .so3 import canonicalize

DEFAULT_MAX_N = 6
DEFAULT_DIM = 128


def hsh_basis_size(max_n: int) -> int:
    """Number of basis functions with n <= max_n."""
    return sum((n + 1) ** 2 for n in range(max_n + 1))


def hsh_index_table(max_n: int) -> list[tuple[int, int, int]]:
    """The (n, l, m) triple of every component, in storage order."""
    return [(n, l, m)
            for n in range(max_n + 1)
            for l in range(n + 1)
            for m in range(-l, l + 1)]


def gegenbauer(k: int, alpha: float, x) -> np.ndarray:
    """Gegenbauer polynomial C_k^(alpha)(x) by the standard recurrence.

    C_0 = 1, C_1 = 2 alpha x,
    k C_k = 2 x (k + alpha - 1) C_{k-1} - (k + 2 alpha - 2) C_{k-2}.
    """
    if k < 0:
        raise DimensionError(f"gegenbauer degree must be >= 0, got {k}")
    x = np.asarray(x, dtype=np.float64)
    prev = np.ones_like(x)
    if k == 0:
        return prev
    cur = 2.0 * alpha * x
    for j in range(2, k + 1):
        prev, cur = cur, (2.0 * x * (j + alpha - 1.0) * cur - (j + 2.0 * alpha - 2.0) * prev) / j
    return cur


def _legendre_table(x: np.ndarray, s: np.ndarray, lmax: int) -> dict[tuple[int, int], np.ndarray]:
    """Associated Legendre P_l^m(x) without the Condon-Shortley phase.

    ``x`` is cos(T) and ``s`` is sin(T) >= 0.
    """
    p: dict[tuple[int, int], np.ndarray] = {(0, 0): np.ones_like(x)}
    for m in range(1, lmax + 1):
        p[(m, m)] = (2.0 * m - 1.0) * s * p[(m - 1, m - 1)]
    for m in range(lmax):
        p[(m + 1, m)] = (2.0 * m + 1.0) * x * p[(m, m)]
    for m in range(lmax + 1):
        for l in range(m + 2, lmax + 1):
            p[(l, m)] = ((2.0 * l - 1.0) * x * p[(l - 1, m)]
                         - (l + m - 1.0) * p[(l - 2, m)]) / (l - m)
    return p


def real_sph_harm(l: int, m: int, theta, phi) -> np.ndarray:
    """Real orthonormal spherical harmonic Y_lm(theta, phi), CS-phase free.

    m = 0 gives K_l0 P_l^0(cos theta); positive/negative m give the
    sqrt(2) K cos(m phi) / sin(|m| phi) branches.
    """
    if l < 0 or abs(m) > l:
        raise DimensionError(f"invalid spherical harmonic degree (l={l}, m={m})")
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    x = np.cos(theta)
    s = np.sin(theta)
    p = _legendre_table(x, s, l)[(l, abs(m))]
    am = abs(m)
    k = math.sqrt((2 * l + 1) / (4.0 * math.pi)
                  * math.factorial(l - am) / math.factorial(l + am))
    if m == 0:
        return k * p
    if m > 0:
        return math.sqrt(2.0) * k * np.cos(m * phi) * p
    return math.sqrt(2.0) * k * np.sin(am * phi) * p


def _radial_norm(n: int, l: int) -> float:
    return (2.0 ** l) * math.factorial(l) * math.sqrt(
        2.0 * (n + 1) * math.factorial(n - l) / (math.pi * math.factorial(n + l + 1)))


def _basis_raw(quats: np.ndarray, max_n: int) -> np.ndarray:
    """Evaluate all basis functions at raw (non-canonicalized) unit quaternions."""
    q = np.atleast_2d(np.asarray(quats, dtype=np.float64))
    if q.shape[-1] != 4:
        raise DimensionError(f"quaternions must be (N,4), got {q.shape}")
    w, x, y, z = q.T
    r3 = np.sqrt(x * x + y * y + z * z)
    cospsi = np.clip(w, -1.0, 1.0)
    sinpsi = r3
    safe = r3 > 1e-12
    cos_t = np.where(safe, z / np.where(safe, r3, 1.0), 1.0)
    cos_t = np.clip(cos_t, -1.0, 1.0)
    rho = np.sqrt(x * x + y * y)
    sin_t = np.where(safe, rho / np.where(safe, r3, 1.0), 0.0)

    # Azimuthal factors cos(m F), sin(m F) via the angle-addition recurrence
    # on cos F = x/rho, sin F = y/rho. Unlike atan2 + trig, every step here is
    # exactly odd/even under q -> -q, which keeps the documented parity
    # Z_nlm(-q) = (-1)^n Z_nlm(q) bitwise-exact.
    in_plane = rho > 1e-300
    cos_f = np.where(in_plane, x / np.where(in_plane, rho, 1.0), 1.0)
    sin_f = np.where(in_plane, y / np.where(in_plane, rho, 1.0), 0.0)

    lmax = max_n
    leg = _legendre_table(cos_t, sin_t, lmax)
    cosm = [np.ones_like(cos_f)]
    sinm = [np.zeros_like(sin_f)]
    for m in range(1, lmax + 1):
        cosm.append(cosm[-1] * cos_f - sinm[-1] * sin_f)
        sinm.append(sinm[-1] * cos_f + cosm[-2] * sin_f)

    sin_pows = [np.ones_like(sinpsi)]
    for _ in range(lmax):
        sin_pows.append(sin_pows[-1] * sinpsi)

    # Gegenbauer C_j^(l+1)(cos psi) for j = 0..max_n-l, per l.
    geg: dict[tuple[int, int], np.ndarray] = {}
    for l in range(lmax + 1):
        alpha = l + 1.0
        prev = np.ones_like(cospsi)
        geg[(0, l)] = prev
        if max_n - l >= 1:
            cur = 2.0 * alpha * cospsi
            geg[(1, l)] = cur
            for j in range(2, max_n - l + 1):
                prev, cur = cur, (2.0 * cospsi * (j + alpha - 1.0) * cur
                                  - (j + 2.0 * alpha - 2.0) * prev) / j
                geg[(j, l)] = cur

    out = np.empty((q.shape[0], hsh_basis_size(max_n)), dtype=np.float64)
    col = 0
    sqrt2 = math.sqrt(2.0)
    for n in range(max_n + 1):
        for l in range(n + 1):
            radial = _radial_norm(n, l) * geg[(n - l, l)] * sin_pows[l]
            for m in range(-l, l + 1):
                am = abs(m)
                k = math.sqrt((2 * l + 1) / (4.0 * math.pi)
                              * math.factorial(l - am) / math.factorial(l + am))
                if m == 0:
                    ang = k * leg[(l, 0)]
                elif m > 0:
                    ang = sqrt2 * k * cosm[m] * leg[(l, m)]
                else:
                    ang = sqrt2 * k * sinm[am] * leg[(l, am)]
                out[:, col] = radial * ang
                col += 1
    return out


def encode_rotations(quats: np.ndarray, max_n: int = DEFAULT_MAX_N,
                     dim: int = DEFAULT_DIM) -> np.ndarray:
    """Encode unit quaternions as the first ``dim`` basis values.

    Input quaternions are canonicalized (w >= 0) so that both lifts of a
    rotation encode identically. ``dim`` must not exceed the basis size.
    """
    size = hsh_basis_size(max_n)
    if not 1 <= dim <= size:
        raise DimensionError(f"dim={dim} outside [1, {size}] for max_n={max_n}")
    q = canonicalize(np.atleast_2d(np.asarray(quats, dtype=np.float64)))
    return _basis_raw(q, max_n)[:, :dim]


def encode_rotation(q: np.ndarray, max_n: int = DEFAULT_MAX_N,
                    dim: int = DEFAULT_DIM) -> np.ndarray:
    """Single-rotation wrapper around encode_rotations."""
    return encode_rotations(np.asarray(q)[None, :], max_n=max_n, dim=dim)[0]


def orthonormality_check(max_n: int, n_samples: int, seed: int = 0,
                         chunk: int = 50_000) -> float:
    """Monte-Carlo Gram deviation of the basis from the identity.

    Draws Haar-uniform unit quaternions on the full 3-sphere (both lifts;
    restricting to w >= 0 would break even-against-odd-n orthogonality),
    accumulates the outer-product average scaled by the sphere volume
    2 pi^2, and returns max |Gram - I|.
    """
    size = hsh_basis_size(max_n)
    rng = np.random.default_rng(seed)
    gram = np.zeros((size, size), dtype=np.float64)
    done = 0
    while done < n_samples:
        take = min(chunk, n_samples - done)
        g = rng.standard_normal((take, 4))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        h = _basis_raw(g, max_n)
        gram += h.T @ h
        done += take
    gram *= 2.0 * math.pi ** 2 / n_samples
    return float(np.abs(gram - np.eye(size)).max())
