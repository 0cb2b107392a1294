"""Tour of the dense proposal grid, feature sampling, and random masking.

Every candidate segment lives at a (duration, start) cell of a D x T grid.
Each valid cell samples N points from the boundary-expanded segment via a
sparse bilinear map, and during training whole proposal features are
randomly zeroed (with survivor rescaling) to decorrelate neighbouring
cells.
"""

import numpy as np

from tadkit import (MaskConfig, build_sampling_matrix, draw_mask,
                    mask_proposals, proposal_grid, sample_proposal_features)

# --- the grid ---------------------------------------------------------------
grid = proposal_grid(t_scale=8, d_max=8)
print(f"grid T={grid.t_scale} D={grid.d_max}: "
      f"{grid.n_valid} valid cells of {grid.d_max * grid.t_scale}")
print("validity mask (rows = duration-1, cols = start):")
for d in range(grid.d_max):
    print("   " + "".join(".#"[int(v)] for v in grid.valid[d]))

# cell (d, t) covers snippets [t, t+d+1); it fits iff t + d + 1 <= T
assert grid.n_valid == 8 * 9 // 2

# --- sampling ---------------------------------------------------------------
sm = build_sampling_matrix(t_scale=8, d_max=8, n_samples=4, expansion=0.25)
print(f"\nsampling matrix: {sm.weights.shape[0]} rows x {sm.t_in} cols, "
      f"{sm.weights.nnz} nonzeros")

# rows for in-range points sum to 1 (bilinear weights are a convex pair)
row_sums = np.asarray(sm.weights.sum(axis=1)).ravel()
print(f"row sums are 0 (outside/invalid) or 1 (in range): "
      f"{np.unique(np.round(row_sums, 12)).tolist()}")

# sampling a linear ramp returns the sample positions themselves
ramp = np.arange(8, dtype=float)[None, :]          # (C=1, T)
sampled = sample_proposal_features(ramp, sm)       # (1, N, D, T)
d, t = 3, 2                                        # segment [2, 6), k = 4
print(f"cell (d={d}, t={t}) sample points on a ramp: "
      f"{np.round(sampled[0, :, d, t], 3)}")

# --- masking ----------------------------------------------------------------
cfg = MaskConfig(p=0.1, granularity="proposal")
rng = np.random.default_rng(0)
tensor = np.ones((16, 4, 8, 8))
masked = mask_proposals(tensor, cfg, training=True, rng=rng)

dropped = np.all(masked == 0, axis=(0, 1))         # per-(d, t) cell
print(f"\nmasking p={cfg.p}: dropped {dropped.sum()} of "
      f"{dropped.size} cells this draw")
print(f"survivor value 1/(1-p) = {1 / (1 - cfg.p):.6f}; "
      f"observed {np.unique(masked[masked > 0])}")

# the scaling keeps the expected tensor unchanged over many draws
mean = np.mean([
    mask_proposals(tensor, cfg, training=True, rng=rng).mean()
    for _ in range(500)
])
print(f"mean over 500 draws: {mean:.4f} (expectation 1.0)")

# outside training the call is the identity, bit for bit
inference = mask_proposals(tensor, cfg, training=False)
assert inference.tobytes() == tensor.tobytes()
print("inference path is the identity: OK")

# channel granularity zeroes whole channels instead of cells
ch = draw_mask((16, 4, 8, 8), MaskConfig(p=0.3, granularity="channel"),
               np.random.default_rng(1))
flat = ch.reshape(16, -1)
assert all(len(np.unique(row)) == 1 for row in flat)
print(f"channel granularity: {int((flat[:, 0] == 0).sum())} of 16 "
      f"channels dropped")
