"""Greedy matching, R11 / R40 average precision, and the report table."""
from relate3d.data_io import Frame, LabeledBox
from relate3d.eval import DetectionResult, EvalConfig, ap_interpolated, evaluate
from relate3d.geometry import Box3D
from relate3d.scenes import SceneSpec, generate_frames

# Two ground truths, one hit at 0.9 and one miss at 0.8: precision is 1 up to recall 0.5.
print("R11:", ap_interpolated([0.9, 0.8], [True, False], 2, "r11"), "= 6/11")
print("R40:", ap_interpolated([0.9, 0.8], [True, False], 2, "r40"))


def car(x):
    return LabeledBox("Car", Box3D(x, 0, 0, 1.5, 1.8, 4.0, 0), bbox2d=(0, 0, 100, 100))


frames = [Frame("a", [car(0), car(20)])]
dets = {"a": [DetectionResult("Car", car(0).box, 0.9), DetectionResult("Car", car(0.5).box, 0.8)]}
print(evaluate(frames, dets, EvalConfig(classes=("Car",), recall_mode="r11")).table())

# Raw noisy proposals from the generator scored against their own ground truth.
frames = generate_frames(SceneSpec("mixed", seed=4), 20)
dets = {f.frame_id: [DetectionResult(c, b, s) for c, b, s in
                     zip(f.proposals.class_labels, f.proposals.boxes, f.proposals.scores)] for f in frames}
print(evaluate(frames, dets, EvalConfig(classes=("Car", "Pedestrian"))).table())
