"""The layer engine: exact forward passes and finite-difference agreement.

Every layer computes its own backward pass with no autograd; this script
shows the forward semantics on small examples and then confirms the analytic
gradients against central differences for the whole layer set.
"""

import numpy as np

from dyntrack.gradcheck import run_all
from dyntrack.nn import FC, LRN, Conv2D, MaxPool2D, ReLU, softmax_cross_entropy

rng = np.random.default_rng(0)

print("== convolution ==")
conv = Conv2D(1, 1, 1, dtype=np.float64)
conv.weight.value[...] = 1.0
conv.bias.value[...] = 0.0
x = np.arange(9.0).reshape(1, 1, 3, 3)
print("1x1 identity kernel leaves the input unchanged:",
      np.array_equal(conv.forward(x), x))

conv = Conv2D(3, 96, 7, stride=2, pad=0, rng=rng)
out = conv.forward(rng.random((1, 3, 75, 75)).astype(np.float32))
print(f"first trunk conv on a 75x75 frame -> {out.shape} "
      f"(spatial (75-7)//2+1 = 35)")

print("\n== relu / pooling ==")
relu = ReLU()
print("relu([-1, 0, 2]) =", relu.forward(np.array([-1.0, 0.0, 2.0])))
pool = MaxPool2D(2, 2)
print("maxpool([[1,2],[3,4]]) =", pool.forward(np.array([[[[1., 2.], [3., 4.]]]]))[0, 0])
print("its gradient routes to the argmax cell:",
      pool.backward(np.ones((1, 1, 1, 1)))[0, 0].tolist())

print("\n== cross-channel normalization ==")
lrn = LRN()
x = rng.standard_normal((1, 8, 2, 2))
y = lrn.forward(x)
print(f"lrn shrinks activations toward zero: |x|={np.abs(x).mean():.3f} "
      f"-> |y|={np.abs(y).mean():.3f}")

print("\n== loss ==")
loss, grad = softmax_cross_entropy(np.array([[0.0, 0.0]]), [1])
print(f"uniform logits give ln(2) = {loss:.6f}")

print("\n== gradient verification (20 random instances per component) ==")
results, ok = run_all(seed=0, instances=20)
for name, err in results.items():
    print(f"  {name:<14} worst relative error {err:.2e}")
print("all components under 1e-4:", ok)
