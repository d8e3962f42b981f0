"""Gram losses compare relations between keypoints, not the features
themselves, so a student whose channels are a rotated copy of the teacher's
pays nothing on the keypoint Gram."""

import numpy as np

from innergeo import (SceneSpec, gen_scene, gram_inter_channel, gram_inter_keypoint, inter_channel_loss,
                      inter_keypoint_loss)
from innergeo.bev import extract_keypoints

scene = gen_scene(SceneSpec(seed=7))
coords, teacher = extract_keypoints(scene.teacher_bev, scene.boxes, scene.spec.enlarge, scene.spec.grid_side)
f = teacher[0]
print(f"target 0: {f.shape[0]} keypoints x {f.shape[1]} channels")
print(f"  channel Gram {gram_inter_channel(f).shape}, keypoint Gram {gram_inter_keypoint(f).shape}")

rng = np.random.default_rng(0)
q, _ = np.linalg.qr(rng.normal(size=(f.shape[1], f.shape[1])))
rotated = [t @ q for t in teacher]
noisy = [t + rng.normal(scale=0.5, size=t.shape) for t in teacher]

for label, student in [("copy", teacher), ("channels rotated", rotated), ("noisy", noisy)]:
    ic = inter_channel_loss(student, teacher)
    ik = inter_keypoint_loss(student, teacher)
    print(f"{label:>17}: inter-channel {ic:10.4f}   inter-keypoint {ik:10.4f}")
