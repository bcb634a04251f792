"""Materialize synthetic sequences as on-disk OTB-style directories.

Writes two training sequences and one held-out tracking sequence under
./data/, ready for the dyntrack CLI:

    python3 demos/00_make_data.py
    dyntrack train --data data/train0 data/train1 --out data/net.ckpt ...
"""

from pathlib import Path

import numpy as np

from dyntrack.imageio import write_sequence_dir
from dyntrack.training import make_synthetic_dataset, make_synthetic_video

root = Path("data")
videos = make_synthetic_dataset(2, n_frames=30, size=(160, 200),
                                patch_size=72, motion=2.5, seed=11)
for i, video in enumerate(videos):
    d = write_sequence_dir(root / f"train{i}", video)
    print(f"wrote {d} ({len(video.frames)} frames)")

holdout = make_synthetic_video(np.random.default_rng(99), n_frames=50,
                               size=(160, 200), patch_size=72, motion=2.5,
                               name="holdout")
d = write_sequence_dir(root / "holdout", holdout)
print(f"wrote {d} ({len(holdout.frames)} frames)")

occluded = make_synthetic_video(np.random.default_rng(42), n_frames=50,
                                size=(160, 200), patch_size=72, motion=2.5,
                                occlude_frames={10, 11, 25, 26, 40, 41},
                                name="occluded")
d = write_sequence_dir(root / "occluded", occluded)
print(f"wrote {d} (patch hidden on frames 11-12, 26-27, 41-42)")
