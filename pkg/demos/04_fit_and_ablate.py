"""Fit a free student to the synthetic teacher and drop each distillation
term in turn. Each term controls the quantity it is named after."""

from dataclasses import replace

from innergeo import FitConfig, LossWeights, SceneSpec, distill_fit, gen_scene

scene = gen_scene(SceneSpec(seed=7))
runs = {
    "full": LossWeights(),
    "no Gram terms": LossWeights(w_ic=0.0, w_ik=0.0),
    "no inner depth": LossWeights(w_inner_depth=0.0),
}
for label, weights in runs.items():
    trace, _ = distill_fit(scene, replace(FitConfig(), weights=weights))
    totals = trace.totals
    gram = sum(g["channel"] + g["keypoint"] for g in trace.gram_mismatch)
    print(f"{label:>15}: total {totals[0]:9.3f} -> {totals[-1]:8.3f}  "
          f"Gram mismatch {gram:9.2f}  inner residual RMS {trace.inner_residual_rms:.4f}  "
          f"Abs Rel {trace.final_metrics['abs_rel']:.3f}")
