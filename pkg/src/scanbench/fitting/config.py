from dataclasses import asdict, dataclass, field

import numpy as np

from ..geom import Camera, look_at

BLOCKS = ('orient', 'trans', 'body', 'hands', 'beta', 'psi', 'alpha')
DEFAULT_STAGES = (('orient', 'trans'), ('orient', 'trans', 'body'), BLOCKS)


@dataclass
class FitConfig:
    """Weights and solver settings. Landmark residuals are in pixels, surface
    residuals in meters, so the surface weights carry the unit conversion."""

    lambda_J: float = 1.0
    lambda_s: float = 1e4
    lambda_c: float = 1e4
    lambda_ib: float = 1.0
    lambda_inner: float = 100.0
    lambda_theta_b: float = 1e-2
    lambda_theta_h: float = 1e-2
    lambda_beta: float = 1e-2
    lambda_E: float = 1e-2
    lambda_bend: float = 1.0
    sigma_px: float = 100.0
    sigma_m: float = 0.05
    # virtual camera ring around the scan
    n_cameras: int = 4
    rig_radius: float = 3.0
    rig_focal: float = 1000.0
    rig_size: tuple = (1000, 1000)
    # solver
    init_max_iter: int = 20          # Gauss-Newton iterations per init stage
    init_headings: int = 4           # yaw starts tried for the first init stage
    max_iter: int = 3                # Gauss-Newton iterations per outer iteration
    max_outer: int = 40
    ftol: float = 1e-12
    xtol: float = 1e-10
    max_step: float = 0.5            # largest parameter change per Gauss-Newton step
    outer_rtol: float = 1e-6
    stages: tuple = DEFAULT_STAGES
    stage_outer: tuple = (1, 2)      # outer iterations for all stages but the last

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k.startswith('lambda_') and not v >= 0:
                raise ValueError(f'{k} must be nonnegative')
        if self.sigma_px <= 0 or self.sigma_m <= 0:
            raise ValueError('robust scales must be positive')
        if self.n_cameras < 1:
            raise ValueError('need at least one camera')
        if not self.max_step > 0:
            raise ValueError('max_step must be positive')
        if self.init_headings < 1:
            raise ValueError('need at least one initial heading')
        for stage in self.stages:
            unknown = set(stage) - set(BLOCKS)
            if unknown:
                raise ValueError(f'unknown parameter blocks {sorted(unknown)}')

    def to_dict(self):
        d = asdict(self)
        d['stages'] = [list(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if 'stages' in d:
            d['stages'] = tuple(tuple(s) for s in d['stages'])
        for k in ('rig_size', 'stage_outer'):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def virtual_rig(center, config: FitConfig):
    """``n_cameras`` cameras evenly spaced on a horizontal ring at the height
    of ``center``, all looking at it; the first sits in front (+z)."""
    center = np.asarray(center, dtype=np.float64)
    W, H = config.rig_size
    cams = []
    for k in range(config.n_cameras):
        a = 2 * np.pi * k / config.n_cameras
        eye = center + config.rig_radius * np.array([np.sin(a), 0.0, np.cos(a)])
        cams.append(look_at(eye, center, config.rig_focal, W, H))
    return cams
