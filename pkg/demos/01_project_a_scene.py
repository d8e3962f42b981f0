"""Place boxes on a ground plane, project the lidar-like cloud through two
cameras and rasterize the sparse ground-truth depth each one sees."""

import numpy as np

from innergeo import SceneSpec, gen_scene, points_in_box, project_points

scene = gen_scene(SceneSpec(seed=7))
print(f"{len(scene.boxes)} targets, {len(scene.cloud.points)} points")
for j, box in enumerate(scene.boxes):
    inside = points_in_box(scene.cloud.points, box)
    print(f"  box {j}: center ({box.center[0]:6.2f}, {box.center[1]:6.2f}) yaw {box.yaw:+.2f}  {len(inside)} points")

for v, (cam, gt) in enumerate(zip(scene.cameras, scene.gt_maps)):
    proj = project_points(cam, scene.cloud.points)
    d = gt.depth[gt.valid]
    print(f"camera {v}: {len(proj.index)} points land on the image, "
          f"{gt.valid.sum()} valid pixels, depth {d.min():.1f}..{d.max():.1f} m")

# The nearest point wins when several fall into the same pixel.
cam, gt = scene.cameras[0], scene.gt_maps[0]
proj = project_points(cam, scene.cloud.points)
px = np.floor(proj.u).astype(int), np.floor(proj.v).astype(int)
hit = (px[0] == px[0][0]) & (px[1] == px[1][0])
print(f"pixel ({px[0][0]}, {px[1][0]}) has {hit.sum()} candidates; kept {gt.depth[px[1][0], px[0][0]]:.3f} "
      f"= min {proj.depth[hit].min():.3f}")
