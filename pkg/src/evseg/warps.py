"""Point-trajectory warps and their Jacobians.

Three warp families are supported:

* ``translation2d``: constant image-plane velocity ``v`` (px/s),
  ``x' = x - (t - t_ref) v``.
* ``rotation3d``: constant camera angular velocity ``w`` (rad/s). Each pixel
  is lifted to a calibrated ray, rotated by ``exp(-(t - t_ref) [w]x)`` and
  re-projected.
* ``denseflow``: a fixed per-pixel velocity field, sampled at the nearest
  pixel. Not optimized, only applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DepthError, GeometryError, ModelError

TRANSLATION2D = "translation2d"
ROTATION3D = "rotation3d"
DENSEFLOW = "denseflow"

KINDS = (TRANSLATION2D, ROTATION3D, DENSEFLOW)
OPTIMIZABLE = (TRANSLATION2D, ROTATION3D)
DOF = {TRANSLATION2D: 2, ROTATION3D: 3}


@dataclass(frozen=True, eq=False)
class MotionModel:
    kind: str
    params: np.ndarray | None = None
    flow: np.ndarray | None = None  # (height, width, 2) px/s, denseflow only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown warp kind {self.kind!r}")
        if self.kind == DENSEFLOW:
            if self.flow is None:
                raise ModelError("denseflow needs a flow field")
            flow = np.array(self.flow, dtype=np.float64)
            if flow.ndim != 3 or flow.shape[2] != 2:
                raise ModelError("flow field must have shape (height, width, 2)")
            if not np.all(np.isfinite(flow)):
                raise ModelError("flow field must be finite")
            flow.setflags(write=False)
            object.__setattr__(self, "flow", flow)
            object.__setattr__(self, "params", np.zeros(0))
            return
        params = np.zeros(DOF[self.kind]) if self.params is None else np.array(self.params, dtype=np.float64).reshape(-1)
        if params.shape != (DOF[self.kind],):
            raise ModelError(f"{self.kind} takes {DOF[self.kind]} parameters, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise ModelError("motion parameters must be finite")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @property
    def dof(self):
        return DOF.get(self.kind, 0)

    def with_params(self, params):
        return MotionModel(self.kind, params)

    def check_geometry(self, geometry):
        if self.kind == DENSEFLOW and self.flow.shape[:2] != geometry.shape:
            raise ModelError(f"flow field {self.flow.shape[:2]} does not match sensor {geometry.shape}")

    def __repr__(self):
        if self.kind == DENSEFLOW:
            return f"MotionModel('{DENSEFLOW}', flow{self.flow.shape})"
        return f"MotionModel({self.kind!r}, {self.params.tolist()})"


def translation(vx=0.0, vy=0.0):
    return MotionModel(TRANSLATION2D, [vx, vy])


def rotation(wx=0.0, wy=0.0, wz=0.0):
    return MotionModel(ROTATION3D, [wx, wy, wz])


def zero_model(kind):
    if kind == DENSEFLOW:
        raise ModelError("denseflow has no parameter vector")
    return MotionModel(kind)


@dataclass(frozen=True, eq=False)
class WarpedEvents:
    coords: np.ndarray  # (N, 2) x', y' in px; out-of-frame entries are kept
    source: object
    model: MotionModel

    def __len__(self):
        return len(self.coords)

    @property
    def geometry(self):
        return self.source.geometry

    def out_of_frame_fraction(self):
        if len(self.coords) == 0:
            return 0.0
        g = self.geometry
        x, y = self.coords[:, 0], self.coords[:, 1]
        inside = (x >= -0.5) & (x < g.width - 0.5) & (y >= -0.5) & (y < g.height - 0.5)
        return float(1.0 - inside.mean())


# -- rotation helpers ---------------------------------------------------------

def _hat(v):
    """Batched skew-symmetric matrices, (..., 3) -> (..., 3, 3)."""
    z = np.zeros(v.shape[:-1])
    return np.stack(
        [
            np.stack([z, -v[..., 2], v[..., 1]], axis=-1),
            np.stack([v[..., 2], z, -v[..., 0]], axis=-1),
            np.stack([-v[..., 1], v[..., 0], z], axis=-1),
        ],
        axis=-2,
    )


def _so3_coeffs(theta):
    """sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3 with series near zero."""
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - np.sin(t)) / (t * t * t))
    return a, b, c


def _rotate(phi, p):
    """Apply exp([phi]x) to vectors p (Rodrigues), both (N, 3)."""
    theta = np.linalg.norm(phi, axis=1)
    a, b, _ = _so3_coeffs(theta)
    cross = np.cross(phi, p)
    return p + a[:, None] * cross + b[:, None] * np.cross(phi, cross)


def rotation_matrix(phi):
    """exp([phi]x) for a single axis-angle vector."""
    phi = np.asarray(phi, dtype=np.float64).reshape(1, 3)
    return _rotate(np.repeat(phi, 3, axis=0), np.eye(3)).T


def _rays(events):
    g = events.geometry
    return np.stack([(events.x - g.cx) / g.fx, (events.y - g.cy) / g.fy, np.ones(len(events))], axis=1)


def _rotated_rays(events, omega):
    phi = -events.dt[:, None] * np.asarray(omega, dtype=np.float64)[None, :]
    X = _rotate(phi, _rays(events))
    if np.any(X[:, 2] <= 0):
        raise GeometryError("rotation moves a ray behind the camera")
    return phi, X


def _project_jacobian(X, g):
    """d(pixel)/d(ray) for the pinhole projection, (N, 2, 3)."""
    inv = 1.0 / X[:, 2]
    J = np.zeros((len(X), 2, 3))
    J[:, 0, 0] = g.fx * inv
    J[:, 0, 2] = -g.fx * X[:, 0] * inv * inv
    J[:, 1, 1] = g.fy * inv
    J[:, 1, 2] = -g.fy * X[:, 1] * inv * inv
    return J


def _flow_at(events, flow):
    g = events.geometry
    ix = np.clip(np.rint(events.x).astype(np.intp), 0, g.width - 1)
    iy = np.clip(np.rint(events.y).astype(np.intp), 0, g.height - 1)
    return flow[iy, ix]


# -- public warp API ----------------------------------------------------------

def warp(events, model):
    """Transport every event to ``events.t_ref`` along the model's trajectory."""
    model.check_geometry(events.geometry)
    dt = events.dt
    if model.kind == TRANSLATION2D:
        coords = events.xy - dt[:, None] * model.params[None, :]
    elif model.kind == DENSEFLOW:
        coords = events.xy - dt[:, None] * _flow_at(events, model.flow)
    elif not np.any(model.params):
        coords = events.xy.copy()  # exact identity, no projection round trip
    else:
        g = events.geometry
        _, X = _rotated_rays(events, model.params)
        coords = np.stack([g.fx * X[:, 0] / X[:, 2] + g.cx, g.fy * X[:, 1] / X[:, 2] + g.cy], axis=1)
    return WarpedEvents(coords, events, model)


def coord_jacobians(events, model):
    """d x'_k / d x_k for every event, shape (N, 2, 2)."""
    n = len(events)
    if model.kind != ROTATION3D:
        model.check_geometry(events.geometry)
        return np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    g = events.geometry
    phi, X = _rotated_rays(events, model.params)
    # columns of R scaled by the inverse intrinsics: d ray / d (x, y)
    dX = np.stack([_rotate(phi, np.tile([1.0 / g.fx, 0.0, 0.0], (n, 1))),
                   _rotate(phi, np.tile([0.0, 1.0 / g.fy, 0.0], (n, 1)))], axis=2)
    return _project_jacobian(X, g) @ dX


def coord_jacobian(events, model, k):
    return coord_jacobians(events.subset([k]), model)[0]


def param_jacobians(events, model):
    """d x'_k / d theta for every event, shape (N, 2, dof)."""
    if model.kind == DENSEFLOW:
        raise ModelError("denseflow parameters are not optimizable")
    dt = events.dt
    if model.kind == TRANSLATION2D:
        J = np.zeros((len(events), 2, 2))
        J[:, 0, 0] = -dt
        J[:, 1, 1] = -dt
        return J
    g = events.geometry
    phi, X = _rotated_rays(events, model.params)
    theta = np.linalg.norm(phi, axis=1)
    _, b, c = _so3_coeffs(theta)
    P = _hat(phi)
    Jl = np.eye(3)[None] + b[:, None, None] * P + c[:, None, None] * (P @ P)
    # d(R p)/d phi = -[R p]x Jl, and d phi / d w = -dt I
    dX = dt[:, None, None] * (_hat(X) @ Jl)
    return _project_jacobian(X, g) @ dX


def motion_field_matrices(u, v):
    """Translational (A) and rotational (B) motion-field matrices at normalized coords.

    Returns arrays of shape (..., 2, 3).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    one = np.ones_like(u)
    zero = np.zeros_like(u)
    A = np.stack([np.stack([-one, zero, u], -1), np.stack([zero, -one, v], -1)], -2)
    B = np.stack([np.stack([u * v, -(1 + u * u), v], -1), np.stack([1 + v * v, -u * v, -u], -1)], -2)
    return A, B


def build_motion_field(depth, lin_vel, ang_vel, geometry):
    """Dense image-plane velocity (px/s) of a static scene under camera motion.

    ``depth`` is a (height, width) map in meters, ``lin_vel`` in m/s and
    ``ang_vel`` in rad/s, all in the camera frame.
    """
    Z = np.asarray(depth, dtype=np.float64)
    if Z.shape != geometry.shape:
        raise DepthError(f"depth map {Z.shape} does not match sensor {geometry.shape}")
    if not np.all(np.isfinite(Z)) or np.any(Z <= 0):
        raise DepthError("depth must be positive everywhere")
    nu = np.asarray(lin_vel, dtype=np.float64).reshape(3)
    om = np.asarray(ang_vel, dtype=np.float64).reshape(3)
    ys, xs = np.mgrid[0:geometry.height, 0:geometry.width]
    u = (xs - geometry.cx) / geometry.fx
    v = (ys - geometry.cy) / geometry.fy
    A, B = motion_field_matrices(u, v)
    flow = (A @ nu) / Z[..., None] + B @ om
    flow[..., 0] *= geometry.fx
    flow[..., 1] *= geometry.fy
    return MotionModel(DENSEFLOW, flow=flow)
