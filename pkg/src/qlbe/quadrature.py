"""Gauss-Legendre product rules shared by the rate evaluators.

Every rule returns plain ``(nodes, weights)`` arrays; callers contract the
integrand against the weights with ``np.sum`` (pairwise summation), which keeps
serial and chunked evaluations consistent to round-off.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .kinematics import orthonormal_frame


@lru_cache(maxsize=64)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int, a: float = -1.0, b: float = 1.0):
    """``n``-point Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = _leggauss(int(n))
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


@lru_cache(maxsize=32)
def unit_sphere_rule(n_ang: int):
    """Directions and solid-angle weights on the unit sphere, polar axis along z.

    Gauss-Legendre in cos(theta) with ``n_ang`` nodes times the uniform rule in
    phi with ``2 n_ang`` nodes. Exact for polynomials of degree ``2 n_ang - 1``
    in the direction cosines.
    """
    c, wc = gauss_legendre(n_ang)
    n_phi = 2 * n_ang
    phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
    s = np.sqrt(1.0 - c**2)
    dirs = np.stack(
        [
            np.outer(s, np.cos(phi)).ravel(),
            np.outer(s, np.sin(phi)).ravel(),
            np.repeat(c, n_phi),
        ],
        axis=-1,
    )
    w = np.repeat(wc, n_phi) * (2 * np.pi / n_phi)
    dirs.setflags(write=False)
    w.setflags(write=False)
    return dirs, w


def oriented_sphere(axis, n_ang: int):
    """Unit-sphere rule with its polar axis rotated onto ``axis``.

    A zero axis leaves the rule in its canonical orientation.
    """
    dirs, w = unit_sphere_rule(n_ang)
    axis = np.asarray(axis, dtype=float)
    length = np.linalg.norm(axis)
    if length == 0.0:
        return np.array(dirs), np.array(w)
    e1, e2 = orthonormal_frame(axis)
    rot = np.stack([e1, e2, axis / length], axis=-1)
    return dirs @ rot.T, np.array(w)


def cap_rule(axis, c_min, n_ang: int):
    """Rules on the spherical caps ``n . axis_hat >= c_min``, one cap per entry of ``c_min``.

    Gauss-Legendre in cos(theta) on ``[c_min, 1]`` times the uniform rule in
    phi. Returns directions of shape ``(len(c_min), n_dir, 3)`` and weights of
    shape ``(len(c_min), n_dir)``.
    """
    c_min = np.atleast_1d(np.asarray(c_min, dtype=float))
    x, wx = _leggauss(int(n_ang))
    n_phi = 2 * n_ang
    phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
    half = 0.5 * (1.0 - c_min)[:, None]
    c = half * x[None] + 0.5 * (1.0 + c_min)[:, None]
    wc = half * wx[None]
    s = np.sqrt(np.clip(1.0 - c**2, 0.0, None))
    local = np.stack(
        [
            (s[..., None] * np.cos(phi)).reshape(len(c_min), -1),
            (s[..., None] * np.sin(phi)).reshape(len(c_min), -1),
            np.repeat(c, n_phi, axis=1),
        ],
        axis=-1,
    )
    w = np.repeat(wc, n_phi, axis=1) * (2 * np.pi / n_phi)
    axis = np.asarray(axis, dtype=float)
    e1, e2 = orthonormal_frame(axis)
    rot = np.stack([e1, e2, axis / np.linalg.norm(axis)], axis=-1)
    return local @ rot.T, w


@lru_cache(maxsize=32)
def square_rule(n: int):
    """Tensor Gauss-Legendre rule on ``[-1, 1]^2`` as ``(n*n, 2)`` nodes."""
    x, w = gauss_legendre(n)
    u, v = np.meshgrid(x, x, indexing="ij")
    nodes = np.stack([u.ravel(), v.ravel()], axis=-1)
    weights = np.outer(w, w).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=32)
def disk_rule(n_r: int, n_phi: int):
    """Polar rule on the unit disk: Gauss-Legendre in r times uniform phi."""
    r, wr = gauss_legendre(n_r, 0.0, 1.0)
    phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
    nodes = np.stack(
        [np.outer(r, np.cos(phi)).ravel(), np.outer(r, np.sin(phi)).ravel()], axis=-1
    )
    weights = np.repeat(wr * r, n_phi) * (2 * np.pi / n_phi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights
