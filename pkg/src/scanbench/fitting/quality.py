"""Fit-quality measures against a labelled scan, in millimeters."""

import numpy as np

from ..geom import TriMesh, surface_query


def _query(scan, posed, faces):
    return surface_query(TriMesh(posed.vertices, faces), scan.points)


def skin_error(scan, posed, faces):
    """p_skin-weighted mean scan-to-model distance in mm; None when no
    vertex carries skin probability."""
    w = scan.p_skin
    if w.sum() <= 0:
        return None
    cp, _ = _query(scan, posed, faces)
    return float(1000.0 * (w * cp.distance).sum() / w.sum())


def cloth_penetration_error(scan, posed, faces):
    """(percent of cloth weight inside the model, weighted mean depth in mm
    of the penetrating cloth vertices). Either entry is None when undefined."""
    w = scan.p_cloth
    if w.sum() <= 0:
        return None, None
    cp, inside = _query(scan, posed, faces)
    wi = w * inside
    pct = float(100.0 * wi.sum() / w.sum())
    if wi.sum() <= 0:
        return pct, None
    return pct, float(1000.0 * (wi * cp.distance).sum() / wi.sum())
