"""
The network layer, verified from first principles
=================================================

Everything the attack trains on is built from scratch on numpy: conv,
attention gates, GRU, Adam. Each layer's backward pass is checked against
central finite differences, which is also how the test suite pins them
down. This walk composes a small block, checks it, and takes one
hand-verifiable optimizer step.
"""

import numpy as np

from scabench.nn import (
    Adam, ChannelAttention, Conv2D, FullyConnected, ReLU, Sequential,
    SpatialAttention, check_gradients, finite_difference, relative_error,
)

# 1. a conv block with both attention gates, like the encoder uses
rng = np.random.default_rng(0)
block = Sequential([
    Conv2D(1, 4, 3, stride=1, pad=1, rng=rng),
    ReLU(),
    ChannelAttention(4, reduction=4, rng=rng),
    SpatialAttention(kernel=3, rng=rng),
    Conv2D(4, 2, 3, stride=2, pad=1, rng=rng),
])
x = rng.uniform(0.1, 0.9, size=(2, 1, 8, 8))
r = rng.standard_normal(block.forward(x).shape)


def loss():
    return float((block.forward(x) * r).sum())


# 2. analytic gradients via backward, numeric ones via f(p+h) - f(p-h)
for _, owner, key in block.named_parameters():
    owner.grads[key][...] = 0.0
block.forward(x)
dx = block.backward(r)
pairs = [(x, dx)] + [(owner.params[key], owner.grads[key].copy())
                     for _, owner, key in block.named_parameters()]
err = check_gradients(loss, pairs)
n_params = sum(owner.params[key].size
               for _, owner, key in block.named_parameters())
print(f"block with {n_params} parameters: "
      f"max relative gradient error {err:.2e}")

# 3. one parameter in isolation, to see the machinery plainly
fc = FullyConnected(3, 2, rng=rng)
xf = rng.standard_normal((4, 3))
rf = rng.standard_normal((4, 2))
fc.grads["weight"][...] = 0.0
fc.forward(xf)
fc.backward(rf)
numeric = finite_difference(lambda: float((fc.forward(xf) * rf).sum()),
                            fc.params["weight"])
print(f"fc weight gradient, analytic vs numeric: "
      f"{relative_error(fc.grads['weight'], numeric):.2e}")

# 4. Adam's very first step has a closed form: with gradient g = 1
#    everywhere, every parameter moves by exactly -lr (bias correction
#    cancels), modulo the epsilon guard
opt = Adam(fc.named_parameters(), lr=2e-4)
before = fc.params["weight"].copy()
for key in fc.grads:
    fc.grads[key][...] = 1.0
opt.step()
moved = fc.params["weight"] - before
print(f"first Adam step with unit gradients: moved {moved[0, 0]:+.6f} "
      f"(expected {-2e-4:+.6f})")
