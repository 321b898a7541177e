import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch


class CameraError(ValueError):
    pass


@dataclass
class Camera:
    """Pinhole camera. ``x_cam = R @ x_world + t``; camera looks down +z with
    +x right and +y down in the image."""

    focal: float
    principal: tuple
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.focal = float(self.focal)
        self.principal = tuple(float(c) for c in self.principal)
        self.width, self.height = int(self.width), int(self.height)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.focal <= 0:
            raise CameraError('focal length must be positive')
        if self.width < 1 or self.height < 1:
            raise CameraError('image size must be at least 1x1')
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > 1e-9:
            raise CameraError('extrinsic rotation is not orthonormal')

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def to_dict(self):
        return {'focal_px': self.focal, 'principal_px': list(self.principal),
                'width': self.width, 'height': self.height,
                'R': self.R.tolist(), 't_m': self.t.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d['focal_px'], d['principal_px'], d['width'], d['height'], d['R'], d['t_m'])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def look_at(eye, target, focal, width, height, up=(0.0, 1.0, 0.0)):
    """Camera at ``eye`` looking at ``target`` with world ``up`` mapped to
    image-up."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, -np.asarray(up, dtype=np.float64))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Camera(focal, (width / 2.0, height / 2.0), width, height, R, -R @ eye)


def project(camera: Camera, points):
    """Project world points to pixels.

    Returns ``(uv, valid)``. Points with camera depth <= 0 get ``valid=False``
    and NaN coordinates.
    """
    pc = camera.to_camera(points)
    z = pc[..., 2]
    valid = z > 0
    with np.errstate(divide='ignore', invalid='ignore'):
        uv = camera.focal * pc[..., :2] / z[..., None] + np.asarray(camera.principal)
    uv[~valid] = np.nan
    return uv, valid


def unproject(camera: Camera, uv, depth):
    """Inverse of :func:`project` for known camera-frame depth."""
    uv = np.asarray(uv, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    xy = (uv - np.asarray(camera.principal)) / camera.focal * depth[..., None]
    pc = np.concatenate([xy, depth[..., None]], -1)
    return (pc - camera.t) @ camera.R


def project_t(camera: Camera, points):
    """Differentiable projection of (..., 3) world points; also returns camera
    depth so callers can mask points behind the camera."""
    R = torch.as_tensor(camera.R, dtype=points.dtype)
    t = torch.as_tensor(camera.t, dtype=points.dtype)
    pc = points @ R.T + t
    z = pc[..., 2:3]
    safe = torch.where(z > 0, z, torch.ones_like(z))
    c = torch.as_tensor(camera.principal, dtype=points.dtype)
    return camera.focal * pc[..., :2] / safe + c, pc[..., 2]
