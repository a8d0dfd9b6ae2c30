"""A short ablation run: which relation components help recover headings in parking rows.

Same frames and training settings as the acceptance suite, but one training
seed instead of five, so it finishes in about a minute.
"""
from relate3d.scenes import SceneSpec, generate_frames
from relate3d.training import toy_config, toy_train

frames = generate_frames(SceneSpec("parallel_parking", seed=1), 200)
variants = {
    "init box only": dict(use_box_diff=False, use_feature_append=False),
    "+ box difference": dict(use_feature_append=False),
    "+ feature append": {},
}
for name, flags in variants.items():
    res = toy_train(frames, toy_config(), seed=0, **flags)
    start, heading, center = res.history[0]["heading_mae"], res.final["heading_mae"], res.final["center_mae"]
    print(f"{name:18s} heading MAE {start:.3f} -> {heading:.3f}   center MAE {center:.3f}")
