"""Quick end-to-end check of the compiled module."""

import math

import nlsis

n = 60
kernel = nlsis.Kernel(-1.0, 1.0, n, delta=0.5)
x = kernel.nodes
beta = [1.5 + math.cos(math.pi * xi) for xi in x]
gamma = [1.0] * n

assert len(kernel) == n
assert abs(kernel.integrate([1.0] * n) - 2.0) < 1e-12
assert max(abs(v) for v in kernel.disperse([3.0] * n, d=2.0)) < 1e-12

lp, phi = nlsis.lambda_p(kernel, 0.5, beta, gamma)
routes = nlsis.r0_routes(kernel, 0.5, beta, gamma)
spread = max(routes[k] for k in ("r0_weighted", "r0_variational", "r0_nextgen")) - min(
    routes[k] for k in ("r0_weighted", "r0_variational", "r0_nextgen")
)
assert spread < 1e-8, routes
assert (lp < 0) == (routes["r0_weighted"] > 1)
assert min(phi) > 0

d_star = nlsis.find_d_star(kernel, beta, gamma, 1e-3, 1e3)
print(f"lambda_p = {lp:.6f}, R0 = {routes['r0_weighted']:.6f}, d* = {d_star}")

model = nlsis.Model(kernel, beta, gamma, 1.0, 0.5, 2.0)
eq = model.equilibrium()
assert eq["kind"] == ("endemic" if lp < 0 else "disease_free")
assert model.residual(eq["S"], eq["I"]) < 1e-8
run = model.simulate(20.0, seed=7)
assert all(abs(m - 2.0) < 1e-8 for m in run["mass"])
print(f"equilibrium {eq['kind']} k = {eq['k']:.6f}; distance after t=20: {run['dist_endemic'][-1]:.3e}")
print(f"alpha gap = {nlsis.alpha_gap(kernel, 1.0):.6f}")

try:
    nlsis.Kernel(1.0, -1.0, 10, delta=0.5)
except ValueError as e:
    print(f"rejected bad domain: {e}")
else:
    raise AssertionError("bad domain accepted")

print("smoke test ok")
