"""Depth hypotheses, pop-up depth uncertainty, and per-pixel fusion.

"Depth" throughout this module means range: the distance from the camera
center along the back-projected ray to the plane intersection. With pixel
noise Sigma_u, the first-order point covariance is J Sigma_u J^T for the
3x2 back-projection Jacobian J, and the range variance is its projection
onto the ray direction. For a fronto-parallel plane this variance scales
exactly with the squared range, which is the contract the fusion stage
relies on.

Two depth hypotheses (d1, s1^2), (d2, s2^2) fuse to

    d = (s1^2 d2 + s2^2 d1) / (s1^2 + s2^2),  s^2 = s1^2 s2^2 / (s1^2 + s2^2),

the precision-weighted Gaussian product. An infinite variance marks a
non-informative hypothesis and leaves the other untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch
from .geometry import CameraIntrinsics, HomogeneousPlane

INFINITE_VARIANCE = np.inf


@dataclass(frozen=True)
class DepthHypothesis:
    depth: float
    variance: float

    def __post_init__(self):
        if not (self.depth > 0 and np.isfinite(self.depth)):
            raise ValueError("depth must be positive and finite")
        if not (self.variance > 0):
            raise ValueError("variance must be positive (inf marks non-informative)")


@dataclass(frozen=True)
class PixelNoise:
    """2x2 symmetric positive definite pixel covariance."""

    cov: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cov, dtype=float).reshape(2, 2).copy()
        if not np.allclose(c, c.T, atol=1e-12):
            raise ValueError("pixel covariance must be symmetric")
        if c[0, 0] <= 0 or np.linalg.det(c) <= 0:
            raise ValueError("pixel covariance must be positive definite")
        c.setflags(write=False)
        object.__setattr__(self, "cov", c)

    @staticmethod
    def isotropic(sigma_px: float) -> "PixelNoise":
        return PixelNoise(np.eye(2) * sigma_px**2)


def fuse(a: DepthHypothesis, b: DepthHypothesis) -> DepthHypothesis:
    """Precision-weighted product of two depth hypotheses."""
    if np.isinf(a.variance):
        return b
    if np.isinf(b.variance):
        return a
    vsum = a.variance + b.variance
    return DepthHypothesis(
        depth=(a.variance * b.depth + b.variance * a.depth) / vsum,
        variance=a.variance * b.variance / vsum,
    )


def popup_point_jacobian(
    pixel: np.ndarray, intr: CameraIntrinsics, plane: HomogeneousPlane
) -> np.ndarray:
    """d p / d (u, v) of the ray-plane intersection point, (3, 2)."""
    r = intr.ray(pixel)
    n, d = plane.n, plane.d
    nr = float(n @ r)
    if abs(nr) < 1e-12:
        raise ZeroDivisionError("ray parallel to plane")
    B = np.array([[1.0 / intr.fx, 0.0], [0.0, 1.0 / intr.fy], [0.0, 0.0]])
    dp_dr = (-d / nr) * (np.eye(3) - np.outer(r, n) / nr)
    return dp_dr @ B


def popup_point_covariance(
    pixel: np.ndarray, intr: CameraIntrinsics, plane: HomogeneousPlane, noise: PixelNoise
) -> np.ndarray:
    J = popup_point_jacobian(pixel, intr, plane)
    return J @ noise.cov @ J.T


def popup_depth(pixel: np.ndarray, intr: CameraIntrinsics, plane: HomogeneousPlane) -> float:
    """Range to the plane along the pixel ray."""
    r = intr.ray(pixel)
    nr = float(plane.n @ r)
    z = -plane.d / nr
    return float(z * np.linalg.norm(r))


def popup_depth_variance(
    pixel: np.ndarray, intr: CameraIntrinsics, plane: HomogeneousPlane, noise: PixelNoise
) -> float:
    """First-order range variance: ray direction component of the point covariance."""
    r = intr.ray(pixel)
    nr = float(plane.n @ r)
    p = (-plane.d / nr) * r
    rho = float(np.linalg.norm(p))
    u = p / rho
    Sigma_p = popup_point_covariance(pixel, intr, plane, noise)
    return float(u @ Sigma_p @ u)


def popup_depth_gradient(
    pixel: np.ndarray, intr: CameraIntrinsics, plane: HomogeneousPlane
) -> np.ndarray:
    """d range / d (u, v), the (2,) gradient whose outer product gives the variance."""
    r = intr.ray(pixel)
    nr = float(plane.n @ r)
    p = (-plane.d / nr) * r
    u = p / np.linalg.norm(p)
    return u @ popup_point_jacobian(pixel, intr, plane)


def variance_map(
    planes_cam: np.ndarray,
    index_map: np.ndarray,
    intr: CameraIntrinsics,
    noise: PixelNoise,
    stride: int = 1,
) -> np.ndarray:
    """Per-pixel pop-up range variance given the winning plane per pixel.

    planes_cam: (P, 4) camera-frame planes; index_map: (h, w) plane index per
    sampled pixel (-1 for misses, which become inf). stride must match the
    sampling used to build index_map.
    """
    h, w = index_map.shape
    us = np.arange(0, w * stride, stride, dtype=float)
    vs = np.arange(0, h * stride, stride, dtype=float)
    uu, vv = np.meshgrid(us, vs)
    r = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1)

    out = np.full((h, w), np.inf)
    for p in range(planes_cam.shape[0]):
        mask = index_map == p
        if not mask.any():
            continue
        n, d = planes_cam[p, :3], planes_cam[p, 3]
        rm = r[mask]
        nr = rm @ n
        pt = (-d / nr)[:, None] * rm
        rho = np.linalg.norm(pt, axis=1)
        udir = pt / rho[:, None]
        # J = dp/dr @ B with dp/dr = (-d/nr)(I - r n^T / nr); fold into udir
        scale = -d / nr
        ur = np.einsum("ki,ki->k", udir, rm)
        # u^T dp/dr = scale (u - (u.r)/nr n); then B = diag(1/fx, 1/fy) picks x, y
        row_x = scale * (udir[:, 0] - (ur / nr) * n[0]) / intr.fx
        row_y = scale * (udir[:, 1] - (ur / nr) * n[1]) / intr.fy
        g = np.stack([row_x, row_y], axis=1)
        out[mask] = np.einsum("ki,ij,kj->k", g, noise.cov, g)
    return out


def fuse_depth_map(
    d_ext: np.ndarray,
    v_ext: np.ndarray,
    d_pop: np.ndarray,
    v_pop: np.ndarray,
    var_max: float = 0.25,
) -> tuple[np.ndarray, np.ndarray]:
    """Raster fusion of an external depth/variance pair with pop-up maps.

    External pixels that are missing (non-finite or non-positive) or whose
    variance exceeds var_max fall back to the pop-up value; pixels missing on
    both sides come out NaN with infinite variance. All four rasters must
    share one shape.
    """
    arrs = [np.asarray(a, dtype=float) for a in (d_ext, v_ext, d_pop, v_pop)]
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise DimensionMismatch(f"raster shapes differ: {sorted(shapes)}")
    return kernels.fuse_depth_maps(arrs[0], arrs[1], arrs[2], arrs[3], float(var_max))
