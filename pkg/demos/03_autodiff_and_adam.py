"""The small reverse-mode engine: an MLP, its gradients, and Adam on a toy regression."""
import numpy as np

from relate3d import nn

rng = np.random.default_rng(0)
spec = nn.MlpSpec((3, 16, 1))
params = nn.init_params(spec, seed=0)
x = rng.normal(size=(64, 3))
y = np.sin(x[:, :1]) + 0.5 * x[:, 1:2] * x[:, 2:3]


def loss_and_grads():
    tape = nn.Tape()
    pred = nn.mlp(tape, params, tape.input(x))
    loss = nn.scale(tape, nn.total(tape, nn.smooth_l1(tape, pred, y, 1.0)), 1 / len(x))
    grads = tape.backward(np.ones((1, 1)), output=loss)
    return float(loss.value[0, 0]), grads.for_params(params.arrays())


# Analytic gradients against central differences.
_, analytic = loss_and_grads()
err = nn.finite_difference_check(lambda: loss_and_grads()[0], params.arrays(), analytic)
print(f"finite-difference max relative error: {err:.2e}")

# Row-wise max pooling routes each gradient to the winning row.
tape = nn.Tape()
rows = tape.param(np.array([[1.0, 5.0], [3.0, 2.0], [0.0, 7.0]]))
pooled, argmax = nn.max_pool_groups(tape, rows, [[0, 1], [2]])
print("pooled:", pooled.value.tolist(), "winners:", argmax.tolist())

state = nn.AdamState(lr=0.02, warmup_steps=20, total_steps=600)
for step in range(600):
    loss, grads = loss_and_grads()
    nn.adam_step(state, params.arrays(), grads)
    if step % 150 == 0:
        print(f"step {step:3d} lr {state.current_lr():.4f} loss {loss:.4f}")
print(f"final loss {loss_and_grads()[0]:.4f}")
