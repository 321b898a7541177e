import numpy as np


def aabb(points):
    """Tight (xmin, ymin, xmax, ymax) box of the finite rows of ``points``,
    or None when fewer than one finite point remains."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    p = p[np.isfinite(p).all(1)]
    if len(p) == 0:
        return None
    return np.array([p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max()])


def box_area(box):
    return max(box[2] - box[0], 0.0) * max(box[3] - box[1], 0.0)


def box_iou(a, b):
    """IoU of two boxes; 0 when either is degenerate (zero area)."""
    if a is None or b is None or box_area(a) == 0.0 or box_area(b) == 0.0:
        return 0.0
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (box_area(a) + box_area(b) - inter)


def aabb_iou(points_a, points_b, return_flag=False):
    """IoU of the tight axis-aligned boxes around two 2D point sets.

    With ``return_flag`` a second value reports whether either box was
    degenerate (in which case the IoU is 0).
    """
    a, b = aabb(points_a), aabb(points_b)
    degenerate = a is None or b is None or box_area(a) == 0.0 or box_area(b) == 0.0
    iou = box_iou(a, b)
    return (iou, degenerate) if return_flag else iou
