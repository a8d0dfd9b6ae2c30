"""Finite-difference check of the full relation module + head loss."""
from __future__ import annotations

import numpy as np

from . import nn
from .relation import RelationConfig, RelationModule, create_head
from .rng import stream
from .scenes import SceneSpec, generate_scene
from .spatial_graph import GraphStrategy
from .training import TrainConfig, loss_var, prepare_frame

SMALL_CONFIG = RelationConfig(
    strategy=GraphStrategy("knn", k=4), num_layers=4, node_dim=6, input_feature_dim=5,
    output_dim=6, head_hidden=(6,),
)


def relation_gradient_check(seed: int = 0, num_proposals: int = 12, config: RelationConfig = SMALL_CONFIG,
                            step: float = 1e-5, max_attempts: int = 50) -> dict:
    """Max relative error between tape gradients and central differences.

    Instances whose forward pass comes within ``10 * step`` of a ReLU,
    max-pool or smooth-L1 kink are re-sampled.
    """
    tc = TrainConfig()
    rng = stream(seed, "gradcheck")
    for attempt in range(max_attempts):
        sub_seed = int(rng.integers(0, 2**31 - 1))
        spec = SceneSpec("parallel_parking", num_objects=num_proposals, num_distractors=0,
                         feature_dim=config.input_feature_dim, seed=sub_seed)
        frame = generate_scene(spec)
        module = RelationModule.create(config, sub_seed)
        head = create_head(config, sub_seed)
        # random biases so that no ReLU input sits exactly at zero, and a
        # nonzero head output layer so gradients reach the relation module
        brng = stream(sub_seed, "gradcheck/bias")
        for p in [module.init_mlp, *module.edge_mlps, module.projection, head]:
            for b in p.biases:
                b[...] = brng.normal(0.0, 0.1, size=b.shape)
        head.weights[-1][...] = brng.normal(0.0, 0.5, size=head.weights[-1].shape)
        batch = prepare_frame(frame, config, tc)
        params = module.parameters() + head.arrays()

        tape = nn.Tape()
        loss = loss_var(tape, module, head, batch, tc)
        if tape.kink_margin < 10 * step:
            continue
        grads = tape.backward(np.ones((1, 1)), output=loss).for_params(params)

        def loss_fn():
            t = nn.Tape(record=False)
            return float(loss_var(t, module, head, batch, tc).value[0, 0])

        err = nn.finite_difference_check(loss_fn, params, grads, step)
        return {"max_rel_error": err, "attempts": attempt + 1, "num_params": int(sum(p.size for p in params)),
                "kink_margin": tape.kink_margin}
    raise RuntimeError("could not find a kink-free instance")
