"""Benchmark systems: Wiener velocity, coordinated-turn radar, UGV with cones."""

from __future__ import annotations

import numpy as np

from ..errors import ConeCollision
from ..models import STREAM_INPUTS, StateSpaceModel, counter_rng, wrap_angle

WIENER_DT = 0.1

AIR_TRAFFIC_DEFAULTS = {
    "dt": 0.2,
    "height": 50.0,
    "q1": 0.1,
    "q2": 1.75e-4,
    "sigma_r": 50.0,
    "sigma_phi": 0.004,
    "sigma_theta": 0.004,
    "sigma_rdot": 0.1,
}

UGV_DEFAULTS = {
    "dt": 0.0667,
    "lidar_offset": 0.2,
    "cones": [[6.0, 4.0], [-2.0, 6.0], [3.0, -5.0]],
    "q_pos": 1e-4,
    "q_heading": 1e-5,
    "sigma_d": 0.05,
    "sigma_alpha": 0.02,
    # input generator: piecewise-constant segments
    "segment_steps": 20,
    "v_range": [0.5, 1.5],
    "omega_range": [-0.5, 0.5],
}


def _broadcast(mat, x):
    return np.broadcast_to(mat, np.shape(x)[:-1] + mat.shape)


def _merge(defaults, params):
    params = {k: v for k, v in (params or {}).items() if k != "typical_input"}
    unknown = set(params) - set(defaults)
    if unknown:
        raise ValueError(f"unknown model parameters: {sorted(unknown)}")
    out = dict(defaults)
    out.update(params)
    return out


def wiener_velocity_model(dt: float = WIENER_DT) -> StateSpaceModel:
    """Planar constant-velocity target with position measurements.

    State ``[px, py, vx, vy]``, measurement ``[px, py]``, ``R = I``.
    """
    a = np.eye(4)
    a[0, 2] = a[1, 3] = dt
    c = np.eye(2, 4)
    q = np.zeros((4, 4))
    for p, v in ((0, 2), (1, 3)):
        q[p, p] = dt**3 / 3.0
        q[p, v] = q[v, p] = dt**2 / 2.0
        q[v, v] = dt
    zero_hess = np.zeros((2, 4, 4))
    a.setflags(write=False)
    c.setflags(write=False)
    return StateSpaceModel(
        n=4,
        m=2,
        f=lambda x, u=None: np.asarray(x) @ a.T,
        g=lambda x: np.asarray(x) @ c.T,
        Q=q,
        R=np.eye(2),
        f_jacobian=lambda x, u=None: _broadcast(a, x),
        g_jacobian=lambda x: _broadcast(c, x),
        g_hessian=lambda x: _broadcast(zero_hess, x),
        A=a,
        C=c,
        name="wiener",
        typical_state=np.zeros(4),
        typical_scale=np.ones(4),
        params={"dt": dt},
    )


# --- coordinated turn ------------------------------------------------------

_SMALL_TURN = 1e-3


def _turn_coefficients(u):
    """``sin(u)/u``, ``(1-cos u)/u`` and their u-derivatives, series-safe near 0."""
    u = np.asarray(u, dtype=float)
    sin_u, cos_u = np.sin(u), np.cos(u)
    one_minus_cos = 2.0 * np.sin(0.5 * u) ** 2
    small = np.abs(u) < _SMALL_TURN
    if not small.any():
        inv = 1.0 / u
        s, c = sin_u * inv, one_minus_cos * inv
        return s, c, (cos_u - s) * inv, (sin_u - c) * inv, sin_u, cos_u
    us = np.where(small, 1.0, u)
    u2 = u * u
    s = np.where(small, 1.0 - u2 / 6.0 + u2 * u2 / 120.0, sin_u / us)
    c = np.where(small, u / 2.0 - u * u2 / 24.0 + u * u2 * u2 / 720.0, one_minus_cos / us)
    ds = np.where(small, -u / 3.0 + u * u2 / 30.0, (cos_u - s) / us)
    dc = np.where(small, 0.5 - u2 / 8.0 + u2 * u2 / 144.0, (sin_u - c) / us)
    return s, c, ds, dc, sin_u, cos_u


def _ct_transition(dt):
    def f(x, u=None):
        x = np.asarray(x, dtype=float)
        vx, vy, w = x[..., 1], x[..., 3], x[..., 4]
        s, c, _, _, sin_u, cos_u = _turn_coefficients(w * dt)
        a, b = dt * s, dt * c
        out = np.empty_like(x)
        out[..., 0] = x[..., 0] + a * vx - b * vy
        out[..., 1] = cos_u * vx - sin_u * vy
        out[..., 2] = x[..., 2] + b * vx + a * vy
        out[..., 3] = sin_u * vx + cos_u * vy
        out[..., 4] = w
        return out

    def jac(x, u=None):
        x = np.asarray(x, dtype=float)
        vx, vy, w = x[..., 1], x[..., 3], x[..., 4]
        s, c, ds, dc, sin_u, cos_u = _turn_coefficients(w * dt)
        a, b = dt * s, dt * c
        da, db = dt * dt * ds, dt * dt * dc
        out = np.zeros(x.shape[:-1] + (5, 5))
        out[..., [0, 2, 4], [0, 2, 4]] = 1.0
        out[..., 0, 1] = out[..., 2, 3] = a
        out[..., 0, 3] = -b
        out[..., 2, 1] = b
        out[..., 1, 1] = out[..., 3, 3] = cos_u
        out[..., 1, 3] = -sin_u
        out[..., 3, 1] = sin_u
        out[..., 0, 4] = da * vx - db * vy
        out[..., 1, 4] = -dt * (sin_u * vx + cos_u * vy)
        out[..., 2, 4] = db * vx + da * vy
        out[..., 3, 4] = dt * (cos_u * vx - sin_u * vy)
        return out

    return f, jac


def _radar(h):
    def g(x):
        x = np.asarray(x, dtype=float)
        px, vx, py, vy = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        rho = np.hypot(px, py)
        r = np.sqrt(rho * rho + h * h)
        return np.stack(
            [r, np.arctan2(py, px), np.arctan2(h, rho), (px * vx + py * vy) / r], axis=-1
        )

    def jac(x):
        x = np.asarray(x, dtype=float)
        px, vx, py, vy = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        rho2 = px * px + py * py
        rho = np.sqrt(rho2)
        r2 = rho2 + h * h
        r = np.sqrt(r2)
        s = px * vx + py * vy
        out = np.zeros(x.shape[:-1] + (4, 5))
        out[..., 0, 0] = px / r
        out[..., 0, 2] = py / r
        out[..., 1, 0] = -py / rho2
        out[..., 1, 2] = px / rho2
        out[..., 2, 0] = -h * px / (rho * r2)
        out[..., 2, 2] = -h * py / (rho * r2)
        out[..., 3, 0] = vx / r - s * px / (r2 * r)
        out[..., 3, 2] = vy / r - s * py / (r2 * r)
        out[..., 3, 1] = px / r
        out[..., 3, 3] = py / r
        return out

    def hess(x):
        x = np.asarray(x, dtype=float)
        px, vx, py, vy = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        rho2 = px * px + py * py
        rho = np.sqrt(rho2)
        r2 = rho2 + h * h
        r = np.sqrt(r2)
        inv_r, inv_r3 = 1.0 / r, 1.0 / (r2 * r)
        s = px * vx + py * vy
        xx, yy, xy = px * px, py * py, px * py
        out = np.zeros(x.shape[:-1] + (4, 5, 5))

        # range: I / r - p p^T / r^3
        out[..., 0, 0, 0] = inv_r - xx * inv_r3
        out[..., 0, 2, 2] = inv_r - yy * inv_r3
        out[..., 0, 0, 2] = out[..., 0, 2, 0] = -xy * inv_r3

        # azimuth
        inv_rho4 = 1.0 / (rho2 * rho2)
        out[..., 1, 0, 0] = 2.0 * xy * inv_rho4
        out[..., 1, 2, 2] = -2.0 * xy * inv_rho4
        out[..., 1, 0, 2] = out[..., 1, 2, 0] = (yy - xx) * inv_rho4

        # elevation as a function of rho: theta'' p p^T / rho^2 + theta' (I / rho - p p^T / rho^3)
        d1 = -h / r2
        d2 = 2.0 * h * rho / (r2 * r2)
        c_pp = d2 / rho2 - d1 / (rho2 * rho)
        c_i = d1 / rho
        out[..., 2, 0, 0] = c_i + c_pp * xx
        out[..., 2, 2, 2] = c_i + c_pp * yy
        out[..., 2, 0, 2] = out[..., 2, 2, 0] = c_pp * xy

        # range rate s / r
        c5 = 3.0 * s * inv_r3 / r2
        out[..., 3, 0, 0] = -2.0 * vx * px * inv_r3 - s * inv_r3 + c5 * xx
        out[..., 3, 2, 2] = -2.0 * vy * py * inv_r3 - s * inv_r3 + c5 * yy
        out[..., 3, 0, 2] = out[..., 3, 2, 0] = -(vx * py + vy * px) * inv_r3 + c5 * xy
        out[..., 3, 0, 1] = out[..., 3, 1, 0] = inv_r - xx * inv_r3
        out[..., 3, 2, 3] = out[..., 3, 3, 2] = inv_r - yy * inv_r3
        out[..., 3, 0, 3] = out[..., 3, 3, 0] = -xy * inv_r3
        out[..., 3, 2, 1] = out[..., 3, 1, 2] = -xy * inv_r3
        return out

    return g, jac, hess


def air_traffic_model(params: dict | None = None) -> StateSpaceModel:
    """Coordinated turn at constant height observed by a 4-channel radar.

    State ``[px, vx, py, vy, omega]``; measurement ``[range, azimuth,
    elevation, range rate]``. Azimuth uses ``atan2`` and its residuals wrap.
    """
    p = _merge(AIR_TRAFFIC_DEFAULTS, params)
    dt, h = float(p["dt"]), float(p["height"])
    f, f_jac = _ct_transition(dt)
    g, g_jac, g_hess = _radar(h)
    q1, q2 = p["q1"], p["q2"]
    blk = q1 * np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    q = np.zeros((5, 5))
    q[:2, :2] = blk
    q[2:4, 2:4] = blk
    q[4, 4] = q2 * dt
    r = np.diag([p["sigma_r"] ** 2, p["sigma_phi"] ** 2, p["sigma_theta"] ** 2, p["sigma_rdot"] ** 2])
    return StateSpaceModel(
        n=5,
        m=4,
        f=f,
        g=g,
        Q=q,
        R=r,
        f_jacobian=f_jac,
        g_jacobian=g_jac,
        g_hessian=g_hess,
        angle_indices=(1,),
        name="air_traffic",
        typical_state=np.array([130.0, 25.0, -20.0, 1.0, -0.07]),
        typical_scale=np.array([50.0, 5.0, 50.0, 5.0, 0.05]),
        params=p,
    )


# --- UGV ---------------------------------------------------------------------


def _ugv_maps(dt, l, cones):
    cones = np.asarray(cones, dtype=float)
    k = len(cones)

    def f(x, u):
        x = np.asarray(x, dtype=float)
        v, w = u[0], u[1]
        th = x[..., 2]
        step = np.stack([v * np.cos(th), v * np.sin(th), np.broadcast_to(w, th.shape)], axis=-1)
        return x + dt * step

    def f_jac(x, u):
        x = np.asarray(x, dtype=float)
        th = x[..., 2]
        out = np.broadcast_to(np.eye(3), x.shape[:-1] + (3, 3)).copy()
        out[..., 0, 2] = -dt * u[0] * np.sin(th)
        out[..., 1, 2] = dt * u[0] * np.cos(th)
        return out

    def offsets(x):
        x = np.asarray(x, dtype=float)
        th = x[..., 2]
        cos_t, sin_t = np.cos(th), np.sin(th)
        dx = cones[:, 0] - (x[..., 0] + l * cos_t)[..., None]
        dy = cones[:, 1] - (x[..., 1] + l * sin_t)[..., None]
        q = dx * dx + dy * dy
        if np.any(q < 1e-12):
            raise ConeCollision("lidar origin coincides with a cone")
        # first derivatives of (dx, dy) in (px, py, theta), shape (..., 3)
        zeros = np.zeros_like(th)
        ddx = np.stack([-np.ones_like(th), zeros, l * sin_t], axis=-1)
        ddy = np.stack([zeros, -np.ones_like(th), -l * cos_t], axis=-1)
        return x, th, cos_t, sin_t, dx, dy, q, ddx, ddy

    def g(x):
        x, th, _, _, dx, dy, q, _, _ = offsets(x)
        alpha = wrap_angle(np.arctan2(dy, dx) - th[..., None])
        return np.concatenate([np.sqrt(q), alpha], axis=-1)

    def g_jac(x):
        x, _, _, _, dx, dy, q, ddx, ddy = offsets(x)
        d = np.sqrt(q)
        jd = (dx[..., None] * ddx[..., None, :] + dy[..., None] * ddy[..., None, :]) / d[..., None]
        ja = (dx[..., None] * ddy[..., None, :] - dy[..., None] * ddx[..., None, :]) / q[..., None]
        ja = ja - np.array([0.0, 0.0, 1.0])
        return np.concatenate([jd, ja], axis=-2)

    def g_hess(x):
        x, _, cos_t, sin_t, dx, dy, q, ddx, ddy = offsets(x)
        batch = x.shape[:-1]
        d = np.sqrt(q)
        # second derivatives of dx, dy are nonzero only in theta-theta
        h2x = np.zeros(batch + (3, 3))
        h2y = np.zeros(batch + (3, 3))
        h2x[..., 2, 2] = l * cos_t
        h2y[..., 2, 2] = l * sin_t
        xx = ddx[..., :, None] * ddx[..., None, :]
        yy = ddy[..., :, None] * ddy[..., None, :]
        xy = ddx[..., :, None] * ddy[..., None, :]
        e = lambda a: a[..., None, None]  # noqa: E731
        out = np.empty(batch + (2 * k, 3, 3))
        for i in range(k):
            dxi, dyi, qi, di = dx[..., i], dy[..., i], q[..., i], d[..., i]
            grad_q = 2.0 * (dxi[..., None] * ddx + dyi[..., None] * ddy)
            hess_q = 2.0 * (xx + yy + e(dxi) * h2x + e(dyi) * h2y)
            out[..., i, :, :] = hess_q / e(2.0 * di) - grad_q[..., :, None] * grad_q[..., None, :] / e(
                4.0 * di**3
            )
            num = dxi[..., None] * ddy - dyi[..., None] * ddx
            dnum = np.swapaxes(xy, -1, -2) - xy + e(dxi) * h2y - e(dyi) * h2x
            ha = dnum / e(qi) - num[..., :, None] * grad_q[..., None, :] / e(qi * qi)
            out[..., k + i, :, :] = 0.5 * (ha + np.swapaxes(ha, -1, -2))
        return out

    return f, f_jac, g, g_jac, g_hess


def ugv_model(params: dict | None = None) -> StateSpaceModel:
    """Unicycle robot ranging and bearing three cones from an offset lidar.

    State ``[px, py, theta]``, input ``[v, omega]``, measurement
    ``[d1, d2, d3, alpha1, alpha2, alpha3]`` with bearings wrapped.
    """
    p = _merge(UGV_DEFAULTS, params)
    dt, l = float(p["dt"]), float(p["lidar_offset"])
    cones = np.asarray(p["cones"], dtype=float)
    k = len(cones)
    f, f_jac, g, g_jac, g_hess = _ugv_maps(dt, l, cones)
    q = np.diag([p["q_pos"], p["q_pos"], p["q_heading"]])
    r = np.diag([p["sigma_d"] ** 2] * k + [p["sigma_alpha"] ** 2] * k)
    p["typical_input"] = [float(np.mean(p["v_range"])), float(np.mean(p["omega_range"]))]
    return StateSpaceModel(
        n=3,
        m=2 * k,
        f=f,
        g=g,
        Q=q,
        R=r,
        f_jacobian=f_jac,
        g_jacobian=g_jac,
        g_hessian=g_hess,
        angle_indices=tuple(range(k, 2 * k)),
        name="ugv",
        typical_state=np.zeros(3),
        typical_scale=np.array([1.0, 1.0, 1.0]),
        input_dim=2,
        params=p,
    )


def ugv_inputs(seed: int, T: int, params: dict | None = None) -> np.ndarray:
    """Piecewise-constant ``(v, omega)`` sequence of length ``T``.

    Each segment of ``segment_steps`` steps draws ``v`` and ``omega``
    uniformly from their ranges, keyed on ``(seed, segment)``.
    """
    p = _merge(UGV_DEFAULTS, params)
    seg = int(p["segment_steps"])
    out = np.empty((T, 2))
    for start in range(0, T, seg):
        rng = counter_rng(seed, start // seg, STREAM_INPUTS)
        v = rng.uniform(*p["v_range"])
        w = rng.uniform(*p["omega_range"])
        out[start : start + seg] = (v, w)
    return out
