"""A short tour of the tape-based autodiff and the Adam optimizer."""

import numpy as np

from zslt import numerics as nx
from zslt.numerics import AdamState, GradTape, Tensor

rng = np.random.default_rng(0)

# Tensors are immutable float arrays; every op checks for NaN/Inf.
x = Tensor(rng.standard_normal((4, 3)))
w = Tensor(rng.standard_normal((3, 2)))
b = Tensor(np.zeros(2))

# Record a small regression loss on a tape.
target = Tensor(rng.standard_normal((4, 2)))
with GradTape() as tape:
    tape.watch_all({"w": w, "b": b})
    pred = nx.linear(x, w, b)
    loss = nx.mean(nx.sum(nx.square(nx.sub(pred, target)), axis=-1))

grads = nx.backward_grads(loss, tape)
print("loss", round(loss.item(), 4))
print("dL/db", grads["b"].data.round(4))

# The same gradients from central differences.
errors = nx.gradcheck(lambda p: nx.mean(nx.sum(nx.square(nx.sub(nx.linear(x, p["w"], p["b"]), target)), axis=-1)),
                      {"w": w, "b": b})
print("gradcheck max relative error", {k: f"{v:.1e}" for k, v in errors.items()})

# A handful of Adam steps (betas 0.5 / 0.999) drive the loss down.
params, state = {"w": w, "b": b}, AdamState(lr=0.1)
for step in range(50):
    with GradTape() as tape:
        tape.watch_all(params)
        loss = nx.mean(nx.sum(nx.square(nx.sub(nx.linear(x, params["w"], params["b"]), target)), axis=-1))
    params, state = nx.adam_step(params, nx.backward_grads(loss, tape), state)
print("loss after 50 Adam steps", round(loss.item(), 4))

# Non-finite values are hard errors, not silent NaNs.
try:
    nx.log(Tensor([0.0]))
except FloatingPointError as exc:
    print("caught:", exc)
