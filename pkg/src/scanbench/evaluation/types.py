from dataclasses import dataclass, field

import numpy as np

from ..bodymodel import BodyParams
from ..geom import Camera, MaskImage

B_ONLY, BFH = 'B', 'BFH'


class ContractError(ValueError):
    pass


@dataclass
class PersonTruth:
    person_id: int
    params: BodyParams
    joints: np.ndarray           # (K, 3) evaluation keypoints, world frame, meters
    vertices: np.ndarray         # (V, 3) world frame, meters
    is_child: bool = False
    flag: str = BFH              # 'B' (body only reliable) or 'BFH'


@dataclass
class SceneTruth:
    scene_id: str
    camera: Camera
    persons: list
    masks: MaskImage = None

    def __post_init__(self):
        ids = [p.person_id for p in self.persons]
        if len(set(ids)) != len(ids):
            raise ContractError(f'{self.scene_id}: duplicate person ids')
        if self.masks is not None:
            known = set(ids)
            extra = set(np.unique(self.masks.labels).tolist()) - known - {0}
            if extra:
                raise ContractError(f'{self.scene_id}: mask labels {sorted(extra)} have no person')

    @property
    def image_size(self):
        return self.camera.width, self.camera.height


@dataclass
class PredPerson:
    pred_id: int
    joints: np.ndarray           # (K, 3) camera frame, meters
    vertices: np.ndarray = None  # (V, 3) camera frame, meters


@dataclass
class ScenePrediction:
    scene_id: str
    camera: Camera               # intrinsics of the predictor; extrinsics identity
    persons: list = field(default_factory=list)


@dataclass
class MatchOutcome:
    pairs: list                  # (pred id, gt id, mean 2D joint error px)
    false_positives: list
    false_negatives: list

    @property
    def tp(self):
        return len(self.pairs)
