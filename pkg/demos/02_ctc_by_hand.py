"""CTC on a tiny posteriorgram: the loss equals -log of the summed path probabilities."""

import itertools

import numpy as np

from mlalt import Tensor, ctc_loss
from mlalt.tensor import log_softmax
from mlalt.vocab import collapse_ctc

rng = np.random.default_rng(0)
lp = log_softmax(Tensor(rng.standard_normal((4, 3)))).data     # 4 frames, blank + 2 symbols
target = [1, 2]

paths = [p for p in itertools.product(range(3), repeat=4) if collapse_ctc(p) == target]
print(f"{len(paths)} frame paths collapse to {target}:")
for p in paths:
    print("  ", p, f"{np.exp(sum(lp[t, s] for t, s in enumerate(p))):.4f}")
brute = -np.log(sum(np.exp(sum(lp[t, s] for t, s in enumerate(p))) for p in paths))

x = Tensor(lp.copy(), requires_grad=True)
loss = ctc_loss(x, target)
loss.backward()
print(f"\nforward-backward loss {loss.item():.10f}, enumeration {brute:.10f}")
print("gradient w.r.t. log-probs (negative per-frame occupancy):")
print(np.round(x.grad, 4))
print("each row sums to", np.round(x.grad.sum(axis=1), 12))
