"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (loops, enumeration, rasterization,
extended precision) and imports nothing from the package under test, so a
disagreement always points at the production code.
"""

import math

import mpmath
import numpy as np


def conv2d_naive(x, kernel, bias, stride=1, pad="same"):
    """Quintuple-loop cross-correlation over [c,h,w] x [c_out,c_in,k,k]."""
    c_in, h, w = x.shape
    c_out, _, k, _ = kernel.shape
    if pad == "same":
        p = (k - 1) // 2
        xp = np.zeros((c_in, h + 2 * p, w + 2 * p))
        xp[:, p : p + h, p : p + w] = x
        oh, ow = h // stride, w // stride
    else:
        xp = x
        oh = (h - k) // stride + 1
        ow = (w - k) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for co in range(c_out):
        for oy in range(oh):
            for ox in range(ow):
                acc = bias[co]
                for ci in range(c_in):
                    for ky in range(k):
                        for kx in range(k):
                            acc += (
                                kernel[co, ci, ky, kx]
                                * xp[ci, oy * stride + ky, ox * stride + kx]
                            )
                out[co, oy, ox] = acc
    return out


def softmax_mp(values, dps=60):
    """Softmax evaluated directly in 60-digit arithmetic."""
    with mpmath.workdps(dps):
        exps = [mpmath.exp(mpmath.mpf(float(v))) for v in values]
        total = mpmath.fsum(exps)
        return np.array([float(e / total) for e in exps])


def cross_entropy_mp(values, hot_index, dps=60):
    """-(1/n) * log(softmax(values)[hot_index]) in 60-digit arithmetic."""
    with mpmath.workdps(dps):
        exps = [mpmath.exp(mpmath.mpf(float(v))) for v in values]
        total = mpmath.fsum(exps)
        p = exps[hot_index] / total
        return float(-mpmath.log(p) / len(values))


def iou_raster(box_a, box_b, scale=1):
    """IoU by painting integer-coordinate boxes onto a pixel grid and counting.

    Boxes are (x0, y0, x1, y1) with integer corners after multiplying by
    ``scale``; a box covers the half-open pixel range [x0, x1) x [y0, y1).
    """
    ax0, ay0, ax1, ay1 = (int(round(v * scale)) for v in box_a)
    bx0, by0, bx1, by1 = (int(round(v * scale)) for v in box_b)
    x_hi = max(ax1, bx1, 1)
    y_hi = max(ay1, by1, 1)
    grid_a = np.zeros((y_hi, x_hi), dtype=bool)
    grid_b = np.zeros((y_hi, x_hi), dtype=bool)
    grid_a[ay0:ay1, ax0:ax1] = True
    grid_b[by0:by1, bx0:bx1] = True
    union = np.logical_or(grid_a, grid_b).sum()
    if union == 0:
        return 0.0
    return np.logical_and(grid_a, grid_b).sum() / union


def iou_direct(box_a, box_b):
    """Closed-form IoU for float boxes, written independently of the package."""
    ix0 = max(box_a[0], box_b[0])
    iy0 = max(box_a[1], box_b[1])
    ix1 = min(box_a[2], box_b[2])
    iy1 = min(box_a[3], box_b[3])
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    area_a = (box_a[2] - box_a[0]) * (box_a[3] - box_a[1])
    area_b = (box_b[2] - box_b[0]) * (box_b[3] - box_b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def nms_quadratic(boxes, scores, iou_thr):
    """O(n^2) suppression: compare every kept box against every candidate.

    Returns indices of survivors.  Ties in score keep the earlier index.
    """
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    keep = []
    for i in order:
        if all(iou_direct(boxes[i], boxes[j]) <= iou_thr for j in keep):
            keep.append(i)
    return sorted(keep)


def dmp_bruteforce(grid):
    """Lowest diagonal index that is a maximum of both its row and its column."""
    n = len(grid)
    for t in range(n):
        row_max = max(grid[t][j] for j in range(n))
        col_max = max(grid[i][t] for i in range(n))
        if grid[t][t] >= row_max and grid[t][t] >= col_max:
            return t
    return None


def ap_enumeration(det_scores, det_matches, n_gt):
    """11-point AP from an explicit sweep over every detection prefix.

    ``det_scores`` orders detections, ``det_matches[i]`` is True for a true
    positive.  Precision/recall pairs are enumerated at every prefix, then
    each recall checkpoint R in {0.0, 0.1, ..., 1.0} contributes the best
    precision among pairs with recall >= R.
    """
    order = sorted(range(len(det_scores)), key=lambda i: (-det_scores[i], i))
    pairs = []
    tp = fp = 0
    for i in order:
        if det_matches[i]:
            tp += 1
        else:
            fp += 1
        recall = tp / n_gt if n_gt else 0.0
        precision = tp / (tp + fp)
        pairs.append((recall, precision))
    total = 0.0
    for checkpoint in np.linspace(0.0, 1.0, 11):
        best = 0.0
        for recall, precision in pairs:
            if recall >= checkpoint - 1e-12 and precision > best:
                best = precision
        total += best
    return total / 11.0


def sgd_momentum_closed_form(theta0, grads, lr, momentum, decay):
    """Replay the v/theta recursion step by step in plain Python floats."""
    theta = float(theta0)
    v = 0.0
    for g in grads:
        v = momentum * v + g
        theta = theta - lr * (v + decay * theta)
    return theta


def bce_logits_direct(logit, target):
    """Binary cross-entropy from first principles via math.log."""
    p = 1.0 / (1.0 + math.exp(-logit))
    p = min(max(p, 1e-300), 1.0 - 1e-16)
    return -(target * math.log(p) + (1.0 - target) * math.log(1.0 - p))
