"""The four training-data strategies, one tiny worked example each.

Two operate on the annotation set (dropping near-fully-covered videos,
oversampling videos with short instances) and two on feature sequences
(resizing one instance in time, shifting channel blocks by a snippet).
"""

import numpy as np

from tadkit import (AnnotationSet, Instance, VideoAnnotation,
                    instance_coverage, remove_long_coverage, resample_short,
                    resize_instance, temporal_shift)

anns = AnnotationSet({
    "wall_to_wall": VideoAnnotation(
        "wall_to_wall", 10.0, "training",
        [Instance(0.0, 9.9, "run")]),          # coverage 0.99
    "normal": VideoAnnotation(
        "normal", 20.0, "training",
        [Instance(4.0, 12.0, "jump")]),        # coverage 0.40
    "blinker": VideoAnnotation(
        "blinker", 30.0, "training",
        [Instance(5.0, 6.2, "blink")]),        # 1.2s / 30s = 0.04: short
    "held_out": VideoAnnotation(
        "held_out", 10.0, "validation",
        [Instance(0.0, 10.0, "run")]),         # full coverage, but not training
})

# --- strategy 1: drop training videos with near-total coverage --------------
kept = remove_long_coverage(anns, theta_long=0.98)
print("coverage filter (theta 0.98):")
for ann in anns:
    verdict = "kept" if ann.video_id in kept else "DROPPED"
    print(f"  {ann.video_id:<12} coverage {instance_coverage(ann):.2f} "
          f"{ann.subset:<10} -> {verdict}")

# --- strategy 2: oversample videos containing short instances ---------------
epoch = resample_short(kept, theta_short=0.05, repeat_factor=3)
print(f"\nepoch list with short videos repeated x3: {epoch}")

# --- strategy 3: resize one instance in time ---------------------------------
rng = np.random.default_rng(5)
t_raw, channels = 40, 4
feats = rng.normal(size=(t_raw, channels)).astype(np.float32)
ann = anns["normal"]
resized, new_ann = resize_instance(feats, ann, rng,
                                   factor_range=(1.5, 1.5))  # forced stretch
old, new = ann.instances[0], new_ann.instances[0]
print(f"\nresize x1.5: video {ann.duration:.1f}s -> {new_ann.duration:.1f}s, "
      f"features {feats.shape[0]} -> {resized.shape[0]} snippets")
print(f"  instance [{old.start}, {old.end}) -> "
      f"[{new.start:.1f}, {new.end:.1f})")
# the flank before the instance is untouched
snips_before = int(round(old.start / (ann.duration / t_raw)))
assert np.array_equal(resized[:snips_before], feats[:snips_before])

# --- strategy 4: shift channel blocks one snippet ----------------------------
x = np.arange(24, dtype=float).reshape(6, 4)  # (T, C), C=4 -> block size 1
shifted = temporal_shift(x, shift_fraction=0.25)
print("\ntemporal shift (channel 0 forward, channel 1 backward, rest fixed):")
print("  before:")
for row in x:
    print(f"    {row}")
print("  after:")
for row in shifted:
    print(f"    {row}")
