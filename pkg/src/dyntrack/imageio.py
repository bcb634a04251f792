"""Dataset ingestion and result files.

Sequence directory layout (OTB convention): ordered image files in a simple
raster format (binary or ASCII PPM/PGM) plus groundtruth_rect.txt holding one
"x,y,w,h" line per annotated frame, comma/tab/space separated, 1-based pixel
coordinates. Result files use the same 1-based convention with two extra
columns: "x,y,w,h,score,iterations".
"""

import re
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed input data (images, ground truth, result files)."""


# ---- PPM / PGM ---------------------------------------------------------------


def _read_pnm_tokens(blob, count):
    """First `count` whitespace-separated header tokens, comments stripped.
    Returns (tokens, offset of the byte after the last token)."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(blob):
            raise DataError("truncated PNM header")
        match = re.match(rb"\s*(#[^\n]*\n)*\s*(\S+)", blob[pos:])
        if match is None:
            raise DataError("truncated PNM header")
        tokens.append(match.group(2))
        pos += match.end()
    return tokens, pos


def read_image(path):
    """Load a P2/P3/P5/P6 image as (H, W, 3) uint8; grayscale is replicated."""
    blob = Path(path).read_bytes()
    if len(blob) < 2 or blob[0:1] != b"P":
        raise DataError(f"{path}: not a PPM/PGM file")
    magic = blob[0:2].decode(errors="replace")
    if magic not in ("P2", "P3", "P5", "P6"):
        raise DataError(f"{path}: unsupported raster format {magic}")
    channels = 3 if magic in ("P3", "P6") else 1
    tokens, offset = _read_pnm_tokens(blob[2:], 3)
    w, h, maxval = (int(t) for t in tokens)
    if maxval <= 0 or maxval > 255:
        raise DataError(f"{path}: only 8-bit images supported (maxval {maxval})")
    if magic in ("P5", "P6"):
        start = min(2 + offset + 1, len(blob))
        data = np.frombuffer(blob, dtype=np.uint8, offset=start)
        if data.size < h * w * channels:
            raise DataError(f"{path}: truncated pixel data")
        data = data[:h * w * channels]
    else:
        values = blob[2 + offset:].split()
        if len(values) < h * w * channels:
            raise DataError(f"{path}: truncated pixel data")
        data = np.array(values[:h * w * channels], dtype=np.intp)
        data = np.clip(data, 0, 255).astype(np.uint8)
    img = data.reshape(h, w, channels)
    if channels == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img)


def write_image(path, img):
    """Write an (H, W, 3) uint8 image as binary PPM (P6)."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


# ---- sequence directories ------------------------------------------------------

GROUNDTRUTH_NAME = "groundtruth_rect.txt"
_IMAGE_SUFFIXES = (".ppm", ".pgm")


def _numeric_key(path):
    digits = re.findall(r"\d+", path.stem)
    return (int(digits[-1]) if digits else 0, path.name)


def parse_box_line(line, path, lineno, n_required=4):
    """Parse >= n_required numeric columns from a comma/tab/space line."""
    fields = [f for f in re.split(r"[,\s]+", line.strip()) if f]
    if len(fields) < n_required:
        raise DataError(f"{path}:{lineno}: expected at least {n_required} "
                        f"columns, found {len(fields)}")
    values = []
    for col, fld in enumerate(fields[:n_required], start=1):
        try:
            values.append(float(fld))
        except ValueError:
            raise DataError(f"{path}:{lineno}: column {col} is not a number "
                            f"('{fld}')") from None
    return values


def read_groundtruth(path):
    """(N, 4) 0-based boxes from a 1-based OTB ground-truth file."""
    path = Path(path)
    boxes = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        x, y, w, h = parse_box_line(line, path, lineno)
        if w <= 0 or h <= 0:
            raise DataError(f"{path}:{lineno}: non-positive box size "
                            f"{w}x{h}")
        boxes.append([x - 1.0, y - 1.0, w, h])
    if not boxes:
        raise DataError(f"{path}: no ground-truth boxes")
    return np.array(boxes)


class SequenceDir:
    """Lazy view of a sequence directory: image paths plus ground truth."""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"sequence directory {directory} not found")
        candidates = [p for p in self.directory.rglob("*")
                      if p.suffix.lower() in _IMAGE_SUFFIXES]
        self.image_paths = sorted(candidates, key=_numeric_key)
        if not self.image_paths:
            raise DataError(f"{directory}: no {'/'.join(_IMAGE_SUFFIXES)} "
                            f"frames found")
        gt_path = self.directory / GROUNDTRUTH_NAME
        if not gt_path.is_file():
            raise FileNotFoundError(f"{gt_path} not found")
        self.boxes = read_groundtruth(gt_path)
        if len(self.boxes) > len(self.image_paths):
            raise DataError(f"{gt_path}: {len(self.boxes)} boxes for only "
                            f"{len(self.image_paths)} frames")

    def __len__(self):
        return len(self.image_paths)

    def frame(self, index):
        try:
            return read_image(self.image_paths[index])
        except DataError:
            raise
        except Exception as exc:
            raise DataError(f"frame {index} "
                            f"({self.image_paths[index]}): {exc}") from exc

    def frames(self):
        return [self.frame(i) for i in range(len(self))]


def write_sequence_dir(directory, video):
    """Materialize a Video as an on-disk sequence directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(video.frames):
        write_image(directory / f"{i + 1:04d}.ppm", frame)
    lines = [f"{b[0] + 1:.2f},{b[1] + 1:.2f},{b[2]:.2f},{b[3]:.2f}"
             for b in video.boxes]
    (directory / GROUNDTRUTH_NAME).write_text("\n".join(lines) + "\n")
    return directory


# ---- result files --------------------------------------------------------------


def write_result_file(path, boxes, scores, iterations):
    """One "x,y,w,h,score,iterations" line per frame, 1-based coordinates."""
    lines = []
    for box, score, iters in zip(boxes, scores, iterations):
        lines.append(f"{box[0] + 1:.3f},{box[1] + 1:.3f},{box[2]:.3f},"
                     f"{box[3]:.3f},{score:.6f},{iters:d}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_result_file(path):
    """(N, 4) 0-based boxes from a result (or plain ground-truth) file."""
    path = Path(path)
    boxes = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        x, y, w, h = parse_box_line(line, path, lineno)
        boxes.append([x - 1.0, y - 1.0, w, h])
    if not boxes:
        raise DataError(f"{path}: no boxes")
    return np.array(boxes)
