"""Fitting a toy articulated body model to labelled clothed scans, and a
multi-person pose/shape evaluation protocol with a synthetic ground-truth
corpus."""

from .bodymodel import BodyModel, BodyParams, PosedBody, expand_hand_pose, forward, interpolate_template
from .toymodel import make_toy_model

__version__ = '0.1.0'
