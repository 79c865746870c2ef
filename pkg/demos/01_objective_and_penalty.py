"""Walkthrough: the coupled objective and its randomized gradient.

Builds a two-client toy problem by hand, shows how the consensus penalty
couples the local models, checks the analytic gradients against finite
differences, and demonstrates that the two-branch randomized gradient
averages out to the exact gradient.
"""

import numpy as np

from l2gdv import (
    FLProblem,
    ModelVector,
    QuadraticClient,
    F_grad,
    F_value,
    average,
    central_diff_grad,
    f_value,
    psi_grad,
    psi_value,
    stochastic_gradient,
)

print("=" * 64)
print("Two clients on the real line, pulling in opposite directions")
print("=" * 64)

# f_1(v) = (v - 1)^2 / 2 wants v = +1, f_2(v) = (v + 1)^2 / 2 wants v = -1
clients = (
    QuadraticClient(np.eye(1), np.array([1.0])),
    QuadraticClient(np.eye(1), np.array([-1.0])),
)

x = ModelVector([[1.0], [-1.0]])  # each client at its own optimum
print(f"\niterate x = {x.parts.ravel()},  average = {average(x)}")
print(f"penalty psi(x) = {psi_value(x):.4f}   (0 would mean consensus)")
print(f"penalty gradient parts: {psi_grad(x).parts.ravel()}  (sum to zero)")

for lam in (0.0, 1.0, 10.0):
    prob = FLProblem(clients, lam=lam)
    print(f"\nlam = {lam:4}:  f(x) = {f_value(prob, x):.4f}   F(x) = {F_value(prob, x):.4f}"
          f"   ||grad F|| = {F_grad(prob, x).norm():.4f}")
print("\nWith lam = 0 the clients are independently optimal (grad F = 0);")
print("raising lam makes their disagreement cost something.")

print()
print("=" * 64)
print("Gradients agree with central differences")
print("=" * 64)
prob = FLProblem(clients, lam=2.5)
rng = np.random.default_rng(0)
point = ModelVector(rng.standard_normal((2, 1)))
numeric = central_diff_grad(lambda flat: F_value(prob, ModelVector(flat.reshape(2, 1))), point.flat)
analytic = F_grad(prob, point).flat
print(f"numeric  : {numeric}")
print(f"analytic : {analytic}")
print(f"relative error: {np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic):.2e}")

print()
print("=" * 64)
print("The randomized gradient is unbiased")
print("=" * 64)
p = 0.3
tails = stochastic_gradient(prob, point, p, coin=0)   # local-work branch
heads = stochastic_gradient(prob, point, p, coin=1)   # move-to-average branch
mixed = (1 - p) * tails + p * heads
print(f"tails branch (prob {1-p}): {tails.parts.ravel()}")
print(f"heads branch (prob {p}):   {heads.parts.ravel()}")
print(f"weighted average:          {mixed.parts.ravel()}")
print(f"exact gradient:            {F_grad(prob, point).parts.ravel()}")

consensus = ModelVector.replicate([0.7], n=2)
print(f"\nAt a consensus point the heads branch vanishes: "
      f"{stochastic_gradient(prob, consensus, p, 1).norm():.1e}")
