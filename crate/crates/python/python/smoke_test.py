"""Smoke test for the hmmlyap_py extension.

Build with `maturin develop --release` from crates/python, or copy
target/release/libhmmlyap_py.so next to this script as hmmlyap_py.so.
"""

import math

import hmmlyap_py as h

model = h.Model.example()
assert model.n_states == 3
pi = model.stationary()
assert abs(sum(pi) - 1.0) < 1e-12

states, obs = h.sample(model, 20000, seed=7)
assert len(states) == len(obs) == 20000

rhos, loglik = h.filter(model, obs[:1000])
assert len(rhos) == 1000 and math.isfinite(loglik)
assert all(abs(sum(r) - 1.0) < 1e-12 for r in rhos)

est = h.gap(model, obs)
assert abs(est["gap"] + 0.1944) < 0.02, est
print("gap", round(est["gap"], 4), "buffer", est["buffer_length"])
assert h.buffer_length(-0.1944, 1e-15) == 178

d = h.separation(model, obs[:300], [1 / 3] * 3, [1.0, 0.0, 0.0])
assert d[-1] < 1e-15

tau = h.birkhoff_tau(model.transition)
assert 0.0 < tau < 1.0
assert h.hilbert_metric([1, 2, 3], [2, 4, 6]) < 1e-12

g = h.gradient(model, obs[:2000], "mu1,mu2")
assert len(g) == 2 and all(math.isfinite(v) for v in g)

fit = h.infer(model, obs, "mu1,mu2", start=[0.8, -0.8], batch=20, buffer=60, seed=1)
print("infer", [round(v, 3) for v in fit["theta_hat"]], "restarts", fit["restarts"])
assert fit["converged"]
assert isinstance(fit["model"], h.Model)

try:
    h.Model([[0.5, 0.6], [0.5, 0.5]], [0, 1], [1, 1])
except ValueError:
    pass
else:
    raise AssertionError("invalid model accepted")

print("smoke test passed")
