"""Ray-marched RGB + z-depth rendering of a folded tube.

The wall is the zero set of ``F(x) = radius(s(x)) - rho(x)`` where ``s`` is
the arclength of the closest centerline sample and ``rho`` the distance to
it; the lumen is ``F > 0``.  Rays are sphere-traced with a Lipschitz bound
on F and the crossing is refined by false position.  Two point lights ride with
the camera; each gets one hard shadow ray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..camera import DepthMap, Intrinsics, RgbImage
from ..pose_algebra import Pose
from .scene import TubeScene

FAR_DEPTH = 40.0  # cm; z-depth written for rays that never meet the wall
MIN_STEP = 0.01  # cm; root finding refines the crossing, folds are ~0.3 cm wide
ROOT_ITERS = 60
ROOT_TOL = 1e-8
SHADOW_GAP = 0.08  # cm; occluders closer than this to the lit point are ignored
ALBEDO = (0.92, 0.56, 0.50)


class OutsideTubeError(ValueError):
    pass


@dataclass(frozen=True)
class LightRig:
    """Two point lights at +-offset along the camera x axis, inverse-square falloff."""

    offset: float = 0.6
    intensity: float = 2.2
    ambient: float = 0.02

    def positions(self, pose: Pose) -> np.ndarray:
        x = pose.rotation[:, 0]
        return np.stack([pose.translation - self.offset * x, pose.translation + self.offset * x])


@njit(cache=True)
def _locate(x0, x1, x2, hint, pts, tans, h):
    n = pts.shape[0]
    j = hint
    a = (x0 - pts[j, 0]) * tans[j, 0] + (x1 - pts[j, 1]) * tans[j, 1] + (x2 - pts[j, 2]) * tans[j, 2]
    j += int(round(a / h))
    if j < 0:
        j = 0
    elif j > n - 1:
        j = n - 1
    d0 = x0 - pts[j, 0]
    d1 = x1 - pts[j, 1]
    d2 = x2 - pts[j, 2]
    best = d0 * d0 + d1 * d1 + d2 * d2
    while j + 1 < n:
        d0 = x0 - pts[j + 1, 0]
        d1 = x1 - pts[j + 1, 1]
        d2 = x2 - pts[j + 1, 2]
        dd = d0 * d0 + d1 * d1 + d2 * d2
        if dd < best:
            best = dd
            j += 1
        else:
            break
    while j > 0:
        d0 = x0 - pts[j - 1, 0]
        d1 = x1 - pts[j - 1, 1]
        d2 = x2 - pts[j - 1, 2]
        dd = d0 * d0 + d1 * d1 + d2 * d2
        if dd < best:
            best = dd
            j -= 1
        else:
            break
    return j


@njit(cache=True)
def _radius(s, r0, amp, freq, power, phase):
    c = math.cos(2.0 * math.pi * freq * (s - phase))
    if c <= 0.0:
        return r0
    return r0 - amp * c ** power


@njit(cache=True)
def _radius_slope(s, amp, freq, power, phase):
    w = 2.0 * math.pi * freq
    c = math.cos(w * (s - phase))
    if c <= 0.0:
        return 0.0
    return amp * power * c ** (power - 1.0) * math.sin(w * (s - phase)) * w


@njit(cache=True)
def _min_radius(a, b, r0, amp, freq, power, phase):
    """Smallest radius over the arclength window [a, b]."""
    if amp == 0.0 or freq == 0.0:
        return r0
    # fold crests sit where the cosine equals one
    n = math.ceil((a - phase) * freq)
    if phase + n / freq <= b:
        return r0 - amp
    ra = _radius(a, r0, amp, freq, power, phase)
    rb = _radius(b, r0, amp, freq, power, phase)
    return ra if ra < rb else rb


@njit(cache=True)
def _safe_step(f, s, rho, r0, amp, freq, power, phase, lip):
    """Step along any direction that cannot cross the wall.

    Within distance d of x the arclength moves by at most 1.5 d (curvature
    slack) and rho by at most d, so d < min radius over that window - rho
    is safe.  Falls back to the global Lipschitz step.
    """
    d = f
    rmin = _min_radius(s - 1.5 * d, s + 1.5 * d, r0, amp, freq, power, phase)
    local = 0.95 * (rmin - rho)
    if local > d:
        local = d
    glob = f / lip
    return local if local > glob else glob


@njit(cache=True)
def _field(x0, x1, x2, j, pts, tans, h, length, r0, amp, freq, power, phase):
    """Returns (F, s, radial vector); F = +inf-like beyond the open ends."""
    d0 = x0 - pts[j, 0]
    d1 = x1 - pts[j, 1]
    d2 = x2 - pts[j, 2]
    a = d0 * tans[j, 0] + d1 * tans[j, 1] + d2 * tans[j, 2]
    s = j * h + a
    e0 = d0 - a * tans[j, 0]
    e1 = d1 - a * tans[j, 1]
    e2 = d2 - a * tans[j, 2]
    rho = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
    if s < 0.0 or s > length:
        return 1.0, s, e0, e1, e2, rho, False
    return _radius(s, r0, amp, freq, power, phase) - rho, s, e0, e1, e2, rho, True


@njit(cache=True)
def _march(o0, o1, o2, v0, v1, v2, tmax, hint, pts, tans, h, length, r0, amp, freq, power, phase, lip):
    """Sphere-trace from o along unit v; returns (t_hit or -1, hint at hit)."""
    t = 0.0
    j = _locate(o0, o1, o2, hint, pts, tans, h)
    f, s, _, _, _, rho, inside = _field(o0, o1, o2, j, pts, tans, h, length, r0, amp, freq, power, phase)
    while t < tmax:
        step = _safe_step(f, s, rho, r0, amp, freq, power, phase, lip) if inside else 0.5
        if step < MIN_STEP:
            step = MIN_STEP
        tn = t + step
        x0 = o0 + tn * v0
        x1 = o1 + tn * v1
        x2 = o2 + tn * v2
        jn = _locate(x0, x1, x2, j, pts, tans, h)
        fn, sn, _, _, _, rhon, ins = _field(x0, x1, x2, jn, pts, tans, h, length, r0, amp, freq, power, phase)
        if ins and fn <= 0.0:
            # Illinois false position on the bracket [t (F>0), tn (F<=0)]
            lo, flo, jl = t, f, j
            hi, fhi = tn, fn
            side = 0
            for _ in range(ROOT_ITERS):
                if hi - lo < ROOT_TOL:
                    break
                mid = (lo * fhi - hi * flo) / (fhi - flo)
                if not (lo < mid < hi):
                    mid = 0.5 * (lo + hi)
                xm0 = o0 + mid * v0
                xm1 = o1 + mid * v1
                xm2 = o2 + mid * v2
                jm = _locate(xm0, xm1, xm2, jl, pts, tans, h)
                fm, _, _, _, _, _, insm = _field(xm0, xm1, xm2, jm, pts, tans, h, length,
                                                 r0, amp, freq, power, phase)
                if not insm:
                    fm = 1.0
                if fm <= 0.0:
                    hi, fhi, jn = mid, fm, jm
                    if side == -1:
                        flo *= 0.5
                    side = -1
                else:
                    lo, flo, jl = mid, fm, jm
                    if side == 1:
                        fhi *= 0.5
                    side = 1
            return hi, jn
        t = tn
        j = jn
        f = fn
        s = sn
        rho = rhon
        inside = ins
    return -1.0, j


@njit(cache=True)
def _hash01(i, j, seed):
    v = (i * 374761393 + j * 668265263 + seed * 2147483647) & 0xFFFFFFFF
    v = ((v ^ (v >> 13)) * 1274126177) & 0xFFFFFFFF
    v = v ^ (v >> 16)
    return (v & 0xFFFFFF) / 16777216.0


@njit(cache=True)
def _value_noise(u, v, period, seed):
    iu = math.floor(u)
    iv = math.floor(v)
    fu = u - iu
    fv = v - iv
    fu = fu * fu * (3.0 - 2.0 * fu)
    fv = fv * fv * (3.0 - 2.0 * fv)
    iu = int(iu)
    iv0 = int(iv) % period
    iv1 = (iv0 + 1) % period
    a = _hash01(iu, iv0, seed)
    b = _hash01(iu + 1, iv0, seed)
    c = _hash01(iu, iv1, seed)
    d = _hash01(iu + 1, iv1, seed)
    return (a * (1 - fu) + b * fu) * (1 - fv) + (c * (1 - fu) + d * fu) * fv


@njit(cache=True)
def _albedo_scale(s, phi, r0, seed):
    # cells roughly 0.4 cm on the wall; the angular period keeps the texture seamless
    per1 = max(int(round(2.0 * math.pi * r0 / 0.4)), 3)
    per2 = per1 * 3
    n1 = _value_noise(s / 0.4, phi / (2.0 * math.pi) * per1, per1, seed)
    n2 = _value_noise(s / 0.133, phi / (2.0 * math.pi) * per2, per2, seed + 17)
    ridge = 1.0 - abs(2.0 * n1 - 1.0)
    vessel = ridge ** 10
    return (0.8 + 0.35 * n2) * (1.0 - 0.55 * vessel)


@njit(cache=True)
def _render_kernel(cam, rot, fx, fy, cx, cy, width, height, pts, tans, nors, bins, h, length,
                   r0, amp, freq, power, phase, lip, lights, intensity, ambient, far, seed,
                   albedo, depth, rgb):
    o0, o1, o2 = cam[0], cam[1], cam[2]
    hint = _locate(o0, o1, o2, 0, pts, tans, h)
    # refine the start hint with a global scan; cheap once per frame
    best = 1e300
    for q in range(pts.shape[0]):
        dd = (o0 - pts[q, 0]) ** 2 + (o1 - pts[q, 1]) ** 2 + (o2 - pts[q, 2]) ** 2
        if dd < best:
            best = dd
            hint = q
    for i in range(height):
        for jx in range(width):
            dc0 = (jx - cx) / fx
            dc1 = (i - cy) / fy
            norm = math.sqrt(dc0 * dc0 + dc1 * dc1 + 1.0)
            v0 = (rot[0, 0] * dc0 + rot[0, 1] * dc1 + rot[0, 2]) / norm
            v1 = (rot[1, 0] * dc0 + rot[1, 1] * dc1 + rot[1, 2]) / norm
            v2 = (rot[2, 0] * dc0 + rot[2, 1] * dc1 + rot[2, 2]) / norm
            thit, jh = _march(o0, o1, o2, v0, v1, v2, far * norm, hint, pts, tans, h, length,
                              r0, amp, freq, power, phase, lip)
            if thit < 0.0 or thit / norm >= far:
                depth[i, jx] = far
                for c in range(3):
                    rgb[i, jx, c] = 0.0
                continue
            depth[i, jx] = thit / norm
            p0 = o0 + thit * v0
            p1 = o1 + thit * v1
            p2 = o2 + thit * v2
            _, s, e0, e1, e2, rho, _ = _field(p0, p1, p2, jh, pts, tans, h, length,
                                             r0, amp, freq, power, phase)
            slope = _radius_slope(s, amp, freq, power, phase)
            g0 = slope * tans[jh, 0] - e0 / rho
            g1 = slope * tans[jh, 1] - e1 / rho
            g2 = slope * tans[jh, 2] - e2 / rho
            gn = math.sqrt(g0 * g0 + g1 * g1 + g2 * g2)
            n0 = g0 / gn
            n1 = g1 / gn
            n2 = g2 / gn
            phi = math.atan2(e0 * bins[jh, 0] + e1 * bins[jh, 1] + e2 * bins[jh, 2],
                             e0 * nors[jh, 0] + e1 * nors[jh, 1] + e2 * nors[jh, 2])
            shade = ambient
            for li in range(lights.shape[0]):
                l0 = lights[li, 0] - p0
                l1 = lights[li, 1] - p1
                l2 = lights[li, 2] - p2
                dl = math.sqrt(l0 * l0 + l1 * l1 + l2 * l2)
                cosang = (n0 * l0 + n1 * l1 + n2 * l2) / dl
                if cosang <= 0.0:
                    continue
                # shadow ray from the light toward the surface point
                tb, _ = _march(lights[li, 0], lights[li, 1], lights[li, 2], -l0 / dl, -l1 / dl, -l2 / dl,
                               dl - SHADOW_GAP, jh, pts, tans, h, length, r0, amp, freq, power, phase, lip)
                if tb >= 0.0:
                    continue
                shade += intensity * cosang / (dl * dl)
            a = _albedo_scale(s, phi, r0, seed)
            for c in range(3):
                val = albedo[c] * a * shade
                rgb[i, jx, c] = 1.0 if val > 1.0 else val


def check_inside(scene: TubeScene, point) -> None:
    d = scene.centerline
    p = np.asarray(point, dtype=float)
    j = int(np.argmin(np.sum((d.points - p) ** 2, axis=1)))
    a = float((p - d.points[j]) @ d.tangents[j])
    s = j * d.spacing + a
    rho = float(np.linalg.norm(p - d.points[j] - a * d.tangents[j]))
    if s < 0 or s > d.length or rho >= float(scene.radius(s)):
        raise OutsideTubeError(f"point {p.tolist()} is not inside the tube (s={s:.3f}, rho={rho:.3f})")


def render_frame(scene: TubeScene, pose: Pose, k: Intrinsics, lights: LightRig | None = None,
                 far: float = FAR_DEPTH):
    """Render (RgbImage, DepthMap) for a world-from-camera pose.

    Depth is z-depth in cm; rays that leave through an open tube end get
    ``far`` (default ``FAR_DEPTH``) and black colour.
    """
    lights = lights or LightRig()
    check_inside(scene, pose.translation)
    cl = scene.centerline
    depth = np.empty(k.shape, dtype=np.float64)
    rgb = np.empty(k.shape + (3,), dtype=np.float64)
    _render_kernel(
        np.ascontiguousarray(pose.translation), np.ascontiguousarray(pose.rotation),
        float(k.fx), float(k.fy), float(k.cx), float(k.cy), int(k.width), int(k.height),
        cl.points, cl.tangents, cl.normals, cl.binormals, float(cl.spacing), float(cl.length),
        float(scene.base_radius), float(scene.fold_amplitude), float(scene.fold_frequency),
        float(scene.fold_power), float(scene.fold_phase), float(scene.lipschitz()),
        lights.positions(pose), float(lights.intensity), float(lights.ambient), float(far),
        int(scene.texture_seed), np.array(ALBEDO), depth, rgb,
    )
    # depth is stored as float32 on disk; quantise here so files round-trip exactly
    depth = depth.astype(np.float32).astype(np.float64)
    return RgbImage(rgb, k), DepthMap(depth, k)
