"""Node initialization, edge message passing with max pooling, and layer concatenation."""
import numpy as np

from relate3d.relation import ProposalSet, RelationConfig, RelationModule, create_head, forward, refine
from relate3d.scenes import SceneSpec, generate_scene
from relate3d.spatial_graph import GraphStrategy

frame = generate_scene(SceneSpec("parallel_parking", num_objects=10, seed=2))
props = frame.proposals

# The full-size layout: four layers of width 256, concatenated to 5 x 256 before projection.
cfg = RelationConfig(strategy=GraphStrategy("knn", k=16), num_layers=4, node_dim=256, output_dim=256)
module = RelationModule.create(cfg, seed=0)
refined, states = forward(module, props)
print("proposals:", len(props), "feature dim:", props.feature_dim)
print("node states:", [s.shape for s in states], "concat width:", cfg.concat_dim, "output:", refined.shape)

# Relabelling the proposals relabels the output rows and changes nothing else.
perm = np.random.default_rng(0).permutation(len(props))
print("permutation equivariant:", np.array_equal(forward(module, props.permute(perm))[0], refined[perm]))

# A fresh head has a zero output layer, so refinement starts as the identity.
boxes, scores = refine(module, create_head(cfg, 0), props)
print("untrained refinement keeps boxes:", boxes == props.boxes, "scores:", np.unique(scores))

# Ablation switches narrow the layer inputs.
for flags in ({}, {"use_box_diff": False}, {"use_init_box": False, "use_feature_append": False}):
    c = cfg.with_flags(**flags)
    print(f"{str(flags):52s} init in {c.init_in_dim:3d}  edge in {c.edge_in_dim:3d}  concat {c.concat_dim}")
