"""Absolute depth can be wrong while the shape of a target is right.

Shift every prediction on a target by the same amount: the BCE changes,
the inner-depth loss does not. Scale the relative structure and only the
inner-depth loss notices."""

import numpy as np

from innergeo import DepthBinSpec, TargetPixelSet, absolute_depth_bce, inner_depth_loss, select_reference
from innergeo.depth import GroundTruthDepthMap

bins = DepthBinSpec(40, 1.0, 41.0)
centers = bins.centers()


def peaked(depth):
    """Put all mass on the bin containing each depth."""
    probs = np.zeros(depth.shape + (bins.K,))
    idx = bins.bin_index(depth)
    np.put_along_axis(probs, idx[..., None], 1.0, axis=-1)
    return probs


gt = np.full((4, 6), 12.5)
gt[1:3, 1:5] = [[10.5, 11.5, 12.5, 13.5], [10.5, 11.5, 12.5, 13.5]]
pixels = np.array([(x, y) for y in range(1, 3) for x in range(1, 5)])
target = TargetPixelSet(0, pixels, gt[pixels[:, 1], pixels[:, 0]])
gt_map = GroundTruthDepthMap(gt, np.ones_like(gt, bool))

for label, pred in [("exact", gt), ("shifted +3 m", gt + 3.0), ("flattened", np.full_like(gt, 12.5))]:
    probs = peaked(pred)
    bce, _ = absolute_depth_bce(probs, gt_map, bins)
    inner, _ = inner_depth_loss([target], probs, bins)
    ref = select_reference(centers[bins.bin_index(pred[pixels[:, 1], pixels[:, 0]])], target.gt_depth)
    print(f"{label:>13}: BCE {bce:.4f}  inner {inner:.4f}  reference pixel {tuple(int(i) for i in pixels[ref])}")
