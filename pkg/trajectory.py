"""
trajectory - Fling kinematics in the manipulation plane

The two pickers move as a rigid link of length L whose midpoint follows a
path in the vertical plane through the start midpoint m_s and the target
midpoint m_g. The path is two straight segments, a fling from m_s forward to
the turning point m_m and a pull from m_m to m_g. Each segment starts and
ends at rest and is traversed with a triangular speed profile (accelerate at
a, then decelerate at a). The link yaw changes at a constant rate from
theta_s to theta_g over the motion; optional hold steps keep the pickers at
m_g afterwards.

Turning points are given in plane coordinates u = (u_x, u_z): u_x is the
distance from m_s along the plane x-axis, u_z the height above the ground.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from fling_errors import DegeneratePlaneError, PlanError

_Z = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class PlaneFrame:
    origin: np.ndarray
    axis_x: np.ndarray
    axis_z: np.ndarray
    normal: np.ndarray

    def to_plane(self, point):
        p = np.asarray(point, dtype=float)
        return np.array([float(np.dot(p - self.origin, self.axis_x)), float(p[2])])

    def to_world(self, u):
        p = self.origin + float(u[0]) * self.axis_x
        p[2] = float(u[1])
        return p


@dataclass(frozen=True)
class FlingPlan:
    m_s: np.ndarray
    m_m: np.ndarray
    m_g: np.ndarray
    u: np.ndarray
    theta_s: float
    theta_g: float
    L: float
    accel: float
    dt: float
    frame: PlaneFrame
    midpoints: np.ndarray
    yaws: np.ndarray
    left: np.ndarray
    right: np.ndarray
    turning_step: int
    motion_steps: int
    hold_steps: int = 0
    clamped: bool = False

    @property
    def n_steps(self):
        return len(self.midpoints) - 1

    @property
    def pickers(self):
        """(T+1, 2, 3) left and right picker positions per step."""
        return np.stack([self.left, self.right], axis=1)

    @property
    def deltas(self):
        return np.diff(self.pickers, axis=0)

    @property
    def duration(self):
        """Simulated duration of the motion, seconds."""
        return self.motion_steps * self.dt

    def suffix(self, start):
        """Picker positions from step start to the end."""
        return self.pickers[start:]


def manipulation_plane(m_s, m_g):
    """
    Vertical plane through m_s containing m_g.

    Raises DegeneratePlaneError when m_s and m_g coincide in horizontal
    projection.
    """
    m_s = np.asarray(m_s, dtype=float)
    m_g = np.asarray(m_g, dtype=float)
    horizontal = (m_g - m_s) * np.array([1.0, 1.0, 0.0])
    n = np.linalg.norm(horizontal)
    if n < 1e-9:
        raise DegeneratePlaneError('start and goal midpoints differ only vertically; perturb the goal')
    axis_x = horizontal / n
    normal = np.cross(axis_x, _Z)
    return PlaneFrame(origin=m_s.copy(), axis_x=axis_x, axis_z=_Z.copy(), normal=normal)


def profile_distances(d, a, dt, v0=0.0):
    """
    Arc length after each step of an accelerate-then-decelerate motion.

    Starts with speed v0 along the path and ends at rest after distance d.
    The peak speed is sqrt((2ad + v0^2) / 2); if d is too short to stop at
    deceleration a the motion only brakes, harder. The duration is rounded up
    to whole steps and the last step covers the remainder.

    Returns
    -------
    ndarray
        (n+1,) arc lengths, first 0 and last d; a single 0 when d == 0.
    """
    if d <= 0.0:
        return np.zeros(1)
    v0 = max(float(v0), 0.0)

    if v0 * v0 / (2.0 * a) > d:
        brake = v0 * v0 / (2.0 * d)
        total = 2.0 * d / v0

        def s(t):
            return v0 * t - 0.5 * brake * t * t
    else:
        vp = math.sqrt((2.0 * a * d + v0 * v0) / 2.0)
        t1 = (vp - v0) / a
        total = t1 + vp / a

        def s(t):
            tb = np.maximum(t - t1, 0.0)
            ta = np.minimum(t, t1)
            return v0 * ta + 0.5 * a * ta * ta + np.where(t > t1, vp * tb - 0.5 * a * tb * tb, 0.0)

    n = max(1, math.ceil(total / dt - 1e-9))
    t = np.minimum(np.arange(n + 1) * dt, total)
    out = np.asarray(s(t), dtype=float)
    out[0] = 0.0
    out[-1] = d
    return np.minimum(out, d)


def _segment(p0, p1, a, dt, v0=0.0):
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = float(np.linalg.norm(p1 - p0))
    s = profile_distances(d, a, dt, v0)
    if d == 0.0:
        return p0[None, :].copy()
    out = p0[None, :] + (s / d)[:, None] * (p1 - p0)[None, :]
    out[0] = p0
    out[-1] = p1
    return out


def _polyline(points, a, dt, v0=0.0):
    pts = np.asarray(points, dtype=float)
    legs = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(legs)])
    s = profile_distances(cum[-1], a, dt, v0)
    out = np.empty((len(s), 3))
    for axis in range(3):
        out[:, axis] = np.interp(s, cum, pts[:, axis])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def _pickers(midpoints, yaws, L):
    link = np.stack([-np.sin(yaws), np.cos(yaws), np.zeros_like(yaws)], axis=1)
    return midpoints + 0.5 * L * link, midpoints - 0.5 * L * link


def _with_hold(midpoints, yaws, hold_steps):
    if hold_steps <= 0:
        return midpoints, yaws
    midpoints = np.concatenate([midpoints, np.repeat(midpoints[-1:], hold_steps, axis=0)])
    yaws = np.concatenate([yaws, np.repeat(yaws[-1:], hold_steps)])
    return midpoints, yaws


def _clamp_u(u, min_height):
    u = np.array(u, dtype=float)
    if u[1] < min_height:
        u[1] = min_height
        return u, True
    return u, False


def plan_from_turning_point(frame, u, m_g, a=2.0, dt=0.01, L=0.3, theta_s=0.0, theta_g=0.0,
                            hold_steps=0, min_height=0.02):
    """
    Fling plan through a turning point.

    Parameters
    ----------
    frame : PlaneFrame
        Manipulation plane; its origin is m_s.
    u : array_like
        Turning point in plane coordinates (u_x, u_z), meters.
    m_g : array_like
        Target midpoint, meters.
    a : float
        Acceleration magnitude, m/s^2.
    dt : float
        Step duration, seconds.
    L : float
        Picker separation, meters.
    theta_s, theta_g : float
        Start and target link yaw, radians.
    hold_steps : int
        Static steps appended at m_g.
    min_height : float
        Turning points lower than this are raised to it and flagged.

    Returns
    -------
    FlingPlan
    """
    if a <= 0:
        raise PlanError(f'acceleration must be positive, got {a}')
    m_g = np.asarray(m_g, dtype=float)
    u, clamped = _clamp_u(u, min_height)
    m_m = frame.to_world(u)

    fling = _segment(frame.origin, m_m, a, dt)
    pull = _segment(m_m, m_g, a, dt)
    midpoints = np.concatenate([fling, pull[1:]])
    motion_steps = len(midpoints) - 1

    if motion_steps > 0:
        yaws = theta_s + np.arange(motion_steps + 1) * ((theta_g - theta_s) / motion_steps)
    else:
        yaws = np.full(1, float(theta_g))
    midpoints, yaws = _with_hold(midpoints, yaws, hold_steps)
    left, right = _pickers(midpoints, yaws, L)

    return FlingPlan(
        m_s=frame.origin.copy(), m_m=m_m, m_g=m_g.copy(), u=u,
        theta_s=float(theta_s), theta_g=float(theta_g), L=float(L), accel=float(a), dt=float(dt),
        frame=frame, midpoints=midpoints, yaws=yaws, left=left, right=right,
        turning_step=len(fling) - 1, motion_steps=motion_steps, hold_steps=int(hold_steps),
        clamped=clamped,
    )


def stationary_plan(m_s, theta, L, dt=0.01, hold_steps=0):
    """Plan that keeps the pickers at m_s; zero steps unless hold_steps > 0."""
    m_s = np.asarray(m_s, dtype=float)
    frame = PlaneFrame(origin=m_s.copy(), axis_x=np.array([1.0, 0.0, 0.0]),
                       axis_z=_Z.copy(), normal=np.array([0.0, -1.0, 0.0]))
    midpoints, yaws = _with_hold(m_s[None, :].copy(), np.full(1, float(theta)), hold_steps)
    left, right = _pickers(midpoints, yaws, L)
    return FlingPlan(
        m_s=m_s.copy(), m_m=m_s.copy(), m_g=m_s.copy(), u=frame.to_plane(m_s),
        theta_s=float(theta), theta_g=float(theta), L=float(L), accel=0.0, dt=float(dt),
        frame=frame, midpoints=midpoints, yaws=yaws, left=left, right=right,
        turning_step=0, motion_steps=0, hold_steps=int(hold_steps),
    )


def apply_delta(plan, executed_steps, delta, delta_size=0.02, min_height=0.02):
    """
    Adjust the unexecuted part of a plan.

    Before the turning step, the turning point moves by delta * delta_size in
    plane coordinates and the rest of the motion is re-planned from the
    current midpoint position and velocity through the new turning point to
    m_g. After the turning step, the remaining pull is re-planned to m_g
    through a via-point halfway along it, offset by the same amount. Steps up
    to and including executed_steps are never changed.

    Parameters
    ----------
    plan : FlingPlan
    executed_steps : int
        Steps already executed; must be less than plan.n_steps.
    delta : array_like
        Integer pair in {-1, 0, 1} for plane x and z.
    delta_size : float
        Shift per unit delta, meters.
    min_height : float
        Lower bound for the turning point height.

    Returns
    -------
    FlingPlan
    """
    e = int(executed_steps)
    if e < 0 or e >= plan.n_steps:
        raise PlanError(f'executed_steps={e} outside the plan (0..{plan.n_steps - 1})')
    if e >= plan.motion_steps:
        return plan

    shift = np.asarray(delta, dtype=float) * delta_size
    frame = plan.frame
    p0 = plan.midpoints[e]
    v0 = (plan.midpoints[e] - plan.midpoints[e - 1]) / plan.dt if e > 0 else np.zeros(3)

    u = plan.u
    clamped = plan.clamped
    if e < plan.turning_step:
        u, hit = _clamp_u(plan.u + shift, min_height)
        clamped = clamped or hit
        m_m = frame.to_world(u)
        direction = m_m - p0
        length = np.linalg.norm(direction)
        v_par = float(np.dot(v0, direction / length)) if length > 0 else 0.0
        fling = _segment(p0, m_m, plan.accel, plan.dt, v_par)
        pull = _segment(m_m, plan.m_g, plan.accel, plan.dt)
        suffix = np.concatenate([fling, pull[1:]])
        turning_step = e + len(fling) - 1
    else:
        m_m = plan.m_m
        via = p0 + 0.5 * (plan.m_g - p0) + shift[0] * frame.axis_x + shift[1] * frame.axis_z
        via[2] = max(via[2], min_height)
        first = via - p0
        length = np.linalg.norm(first)
        v_par = float(np.dot(v0, first / length)) if length > 0 else 0.0
        suffix = _polyline([p0, via, plan.m_g], plan.accel, plan.dt, v_par)
        turning_step = plan.turning_step

    remaining = len(suffix) - 1
    theta_e = plan.yaws[e]
    yaw_suffix = theta_e + np.arange(remaining + 1) * ((plan.theta_g - theta_e) / max(remaining, 1))
    yaw_suffix[-1] = plan.theta_g if remaining > 0 else theta_e

    mid_new, yaw_new = _with_hold(suffix, yaw_suffix, plan.hold_steps)
    left_new, right_new = _pickers(mid_new, yaw_new, plan.L)

    return replace(
        plan,
        m_m=m_m, u=u, clamped=clamped,
        midpoints=np.concatenate([plan.midpoints[:e], mid_new]),
        yaws=np.concatenate([plan.yaws[:e], yaw_new]),
        left=np.concatenate([plan.left[:e], left_new]),
        right=np.concatenate([plan.right[:e], right_new]),
        turning_step=turning_step,
        motion_steps=e + remaining,
    )


def plan_table(plan):
    """Per-step midpoint, picker positions and yaw as a DataFrame."""
    steps = np.arange(plan.n_steps + 1)
    return pd.DataFrame({
        'step': steps,
        't': steps * plan.dt,
        'mid_x': plan.midpoints[:, 0], 'mid_y': plan.midpoints[:, 1], 'mid_z': plan.midpoints[:, 2],
        'left_x': plan.left[:, 0], 'left_y': plan.left[:, 1], 'left_z': plan.left[:, 2],
        'right_x': plan.right[:, 0], 'right_y': plan.right[:, 1], 'right_z': plan.right[:, 2],
        'yaw': plan.yaws,
    })
