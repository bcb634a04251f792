"""Frame preprocessing shared by training and tracking."""

import numpy as np


def resize_bilinear(img, out_h, out_w):
    """Bilinear resize of an (H, W, C) float image, half-pixel convention."""
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ly = (ys - y0)[:, None, None]
    lx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - lx) + img[y0][:, x1] * lx
    bot = img[y1][:, x0] * (1 - lx) + img[y1][:, x1] * lx
    return top * (1 - ly) + bot * ly


def preprocess_frame(frame, working_size=None):
    """(H, W, 3) uint8/float image -> ((3, H', W') float32 tensor, scale).

    Pixels are mapped to [0, 1], the frame is resized so its shorter side
    equals working_size (when given), and the per-channel mean of the frame
    is subtracted. Boxes must be multiplied by the returned scale to live in
    tensor coordinates.
    """
    img = np.asarray(frame, dtype=np.float32)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.max() > 1.5:
        img = img / 255.0
    scale = 1.0
    if working_size is not None:
        h, w = img.shape[:2]
        short = min(h, w)
        if short != working_size:
            scale = working_size / short
            img = resize_bilinear(img, int(round(h * scale)),
                                  int(round(w * scale)))
    img = img - img.mean(axis=(0, 1), keepdims=True)
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32), scale
