"""RoI feature extraction on a shared feature map.

Coordinates: feature-map element (row i, col j) sits at continuous coordinate
(x=j, y=i). A RoI is (x1, y1, x2, y2) in those float coordinates. Sample
points are clamped into [0, extent-1]; the interpolation ceil is floor+1 with
the index clamped at the boundary, where its weight is zero, so the four
corner weights always sum to 1.
"""

import numpy as np


def map_box_to_roi(box, feature_stride, featmap_extent):
    """Map an image-pixel (x, y, w, h) box to float RoI corners on the map.

    Corners are divided by the stride, clamped to the map, and degenerate
    RoIs are expanded to a minimum extent of 1.0 per axis.
    """
    fh, fw = featmap_extent
    x, y, w, h = (float(v) for v in box)
    x1, y1 = x / feature_stride, y / feature_stride
    x2, y2 = (x + w) / feature_stride, (y + h) / feature_stride
    if x2 < 0 or y2 < 0 or x1 > fw - 1 or y1 > fh - 1:
        raise ValueError(f"box {tuple(box)} lies entirely outside the feature map")
    return map_boxes_to_rois(np.array([[x, y, w, h]]), feature_stride,
                             featmap_extent)[0]


def map_boxes_to_rois(boxes, feature_stride, featmap_extent):
    """Vector form of map_box_to_roi without the outside-check (clamps only)."""
    fh, fw = featmap_extent
    boxes = np.asarray(boxes, dtype=np.float64)
    x1 = boxes[:, 0] / feature_stride
    y1 = boxes[:, 1] / feature_stride
    x2 = (boxes[:, 0] + boxes[:, 2]) / feature_stride
    y2 = (boxes[:, 1] + boxes[:, 3]) / feature_stride
    rois = np.stack([x1, y1, x2, y2], axis=1)
    rois[:, 0::2] = np.clip(rois[:, 0::2], 0.0, fw - 1.0)
    rois[:, 1::2] = np.clip(rois[:, 1::2], 0.0, fh - 1.0)
    _expand_degenerate(rois[:, 0::2], fw)
    _expand_degenerate(rois[:, 1::2], fh)
    return rois


def _expand_degenerate(pair, extent, min_extent=1.0):
    """Grow (lo, hi) column pairs to min_extent, keeping them inside the map."""
    limit = min(min_extent, extent - 1.0)
    narrow = (pair[:, 1] - pair[:, 0]) < limit
    if not narrow.any():
        return
    center = 0.5 * (pair[narrow, 0] + pair[narrow, 1])
    lo = np.clip(center - limit / 2.0, 0.0, extent - 1.0 - limit)
    pair[narrow, 0] = lo
    pair[narrow, 1] = lo + limit


def bilinear_sample(featmap, x, y, channel=None):
    """Interpolate one float point from the four nearest integer points.

    Returns a scalar for a given channel, or the full channel vector when
    channel is None. Points outside [0, W-1] x [0, H-1] are rejected.
    """
    c, h, w = featmap.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise ValueError(f"sample point ({x}, {y}) outside feature map {h}x{w}")
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    lx = x - x0
    ly = y - y0
    val = ((1 - lx) * (1 - ly) * featmap[:, y0, x0]
           + lx * (1 - ly) * featmap[:, y0, x1]
           + (1 - lx) * ly * featmap[:, y1, x0]
           + lx * ly * featmap[:, y1, x1])
    return val if channel is None else float(val[channel])


def _sample_grid(rois, out_size, samples):
    """Sample-point coordinates for every bin: two (N, oh, ow, S) arrays.

    Bin (i, j) covers an equal float slice of the RoI; the s_h x s_w points
    sit at the centers of an even sub-grid of that bin.
    """
    out_h, out_w = out_size
    s_h, s_w = samples
    x1, y1, x2, y2 = rois[:, 0], rois[:, 1], rois[:, 2], rois[:, 3]
    bin_w = (x2 - x1) / out_w
    bin_h = (y2 - y1) / out_h
    jj = np.arange(out_w)[None, None, :, None]
    ii = np.arange(out_h)[None, :, None, None]
    off_x = (np.arange(s_w) + 0.5) / s_w
    off_y = (np.arange(s_h) + 0.5) / s_h
    # sample index s = a * s_w + b, row-major over the sub-grid
    grid_x = np.tile(off_x, s_h)[None, None, None, :]
    grid_y = np.repeat(off_y, s_w)[None, None, None, :]
    px = x1[:, None, None, None] + (jj + grid_x) * bin_w[:, None, None, None]
    py = y1[:, None, None, None] + (ii + grid_y) * bin_h[:, None, None, None]
    return px, py


class RoIAlignCache:
    """Provenance of a roialign_forward call, consumed by the backward pass."""

    def __init__(self, featmap_shape, px, py, argmax):
        self.featmap_shape = featmap_shape
        self.px = px          # (N, oh, ow, S) sample x coordinates
        self.py = py          # (N, oh, ow, S) sample y coordinates
        self.argmax = argmax  # (N, C, oh, ow) winning sample index per channel


def roialign_forward(featmap, rois, out_size=(3, 3), samples=(2, 2)):
    """Max-RoIAlign: bilinear-interpolate each bin's sample points and keep
    the per-channel maximum. Returns (pooled (N, C, oh, ow), cache)."""
    c, h, w = featmap.shape
    rois = np.asarray(rois, dtype=np.float64).reshape(-1, 4)
    px, py = _sample_grid(rois, out_size, samples)
    px = np.clip(px, 0.0, w - 1.0)
    py = np.clip(py, 0.0, h - 1.0)
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    lx = (px - x0).astype(featmap.dtype)
    ly = (py - y0).astype(featmap.dtype)
    # (C, N, oh, ow, S) interpolated values
    vals = (1 - lx) * (1 - ly) * featmap[:, y0, x0]
    vals += lx * (1 - ly) * featmap[:, y0, x1]
    vals += (1 - lx) * ly * featmap[:, y1, x0]
    vals += lx * ly * featmap[:, y1, x1]
    vals = np.moveaxis(vals, 0, 1)  # (N, C, oh, ow, S)
    argmax = vals.argmax(axis=-1)   # ties: first sample in scan order
    pooled = np.take_along_axis(vals, argmax[..., None], axis=-1)[..., 0]
    cache = RoIAlignCache((c, h, w), px, py, argmax)
    return pooled, cache


def roialign_backward(grad_pooled, cache, featmap_shape=None):
    """Route each (bin, channel) gradient to the four integer neighbours of
    its winning sample point, with the forward bilinear weights."""
    if featmap_shape is None:
        featmap_shape = cache.featmap_shape
    if tuple(featmap_shape) != tuple(cache.featmap_shape):
        raise ValueError(f"feature map shape {featmap_shape} does not match "
                         f"forward shape {cache.featmap_shape}")
    c, h, w = featmap_shape
    if grad_pooled.shape != cache.argmax.shape:
        raise ValueError(f"grad shape {grad_pooled.shape} does not match "
                         f"pooled shape {cache.argmax.shape}")
    # winning sample coordinates per (N, C, oh, ow)
    sel = cache.argmax[:, :, :, :, None]
    px = np.take_along_axis(cache.px[:, None], sel, axis=-1)[..., 0]
    py = np.take_along_axis(cache.py[:, None], sel, axis=-1)[..., 0]
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    lx = px - x0
    ly = py - y0
    ci = np.broadcast_to(np.arange(c)[None, :, None, None], grad_pooled.shape)
    grad = np.zeros(c * h * w, dtype=np.float64)
    for xi, yi, wgt in ((x0, y0, (1 - lx) * (1 - ly)),
                        (x1, y0, lx * (1 - ly)),
                        (x0, y1, (1 - lx) * ly),
                        (x1, y1, lx * ly)):
        flat = (ci * (h * w) + yi * w + xi).ravel()
        grad += np.bincount(flat, weights=(wgt * grad_pooled).ravel(),
                            minlength=c * h * w)
    return grad.reshape(c, h, w).astype(grad_pooled.dtype)


class RoIPoolCache:
    """Argmax cells of a roipool_forward call."""

    def __init__(self, featmap_shape, arg_flat):
        self.featmap_shape = featmap_shape
        self.arg_flat = arg_flat  # (N, C, oh, ow) flat cell index into H*W


def _round_half_up(v):
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5).astype(np.intp)


def roipool_forward(featmap, rois, out_size=(3, 3)):
    """Quantized RoI max pooling: corners rounded to the nearest integers,
    the covered cells split into bins by rounded boundaries, per-bin max.
    A bin that rounds to zero area takes its single nearest cell."""
    c, h, w = featmap.shape
    rois = np.asarray(rois, dtype=np.float64).reshape(-1, 4)
    out_h, out_w = out_size
    n = rois.shape[0]
    pooled = np.zeros((n, c, out_h, out_w), dtype=featmap.dtype)
    arg_flat = np.zeros((n, c, out_h, out_w), dtype=np.intp)
    flat_map = featmap.reshape(c, -1)
    for r in range(n):
        x1 = int(np.clip(_round_half_up(rois[r, 0]), 0, w - 1))
        y1 = int(np.clip(_round_half_up(rois[r, 1]), 0, h - 1))
        x2 = int(np.clip(_round_half_up(rois[r, 2]), x1, w - 1))
        y2 = int(np.clip(_round_half_up(rois[r, 3]), y1, h - 1))
        nx = x2 - x1 + 1
        ny = y2 - y1 + 1
        for i in range(out_h):
            ys, ye = _bin_span(i, ny, out_h)
            for j in range(out_w):
                xs, xe = _bin_span(j, nx, out_w)
                cols = np.arange(x1 + xs, x1 + xe)
                rows = np.arange(y1 + ys, y1 + ye)
                cells = (rows[:, None] * w + cols[None, :]).ravel()
                vals = flat_map[:, cells]
                best = vals.argmax(axis=1)
                pooled[r, :, i, j] = vals[np.arange(c), best]
                arg_flat[r, :, i, j] = cells[best]
    return pooled, RoIPoolCache((c, h, w), arg_flat)


def _bin_span(i, n_cells, out_n):
    start = int(_round_half_up(i * n_cells / out_n))
    end = int(_round_half_up((i + 1) * n_cells / out_n))
    if end <= start:  # empty after rounding: nearest valid cell
        start = min(start, n_cells - 1)
        end = start + 1
    return start, end


def roipool_backward(grad_pooled, cache, featmap_shape=None):
    """Gradient flows to each bin's argmax cell."""
    if featmap_shape is None:
        featmap_shape = cache.featmap_shape
    if tuple(featmap_shape) != tuple(cache.featmap_shape):
        raise ValueError(f"feature map shape {featmap_shape} does not match "
                         f"forward shape {cache.featmap_shape}")
    c, h, w = featmap_shape
    ci = np.broadcast_to(np.arange(c)[None, :, None, None], grad_pooled.shape)
    flat = (ci * (h * w) + cache.arg_flat).ravel()
    grad = np.bincount(flat, weights=grad_pooled.ravel().astype(np.float64),
                       minlength=c * h * w)
    return grad.reshape(c, h, w).astype(grad_pooled.dtype)
