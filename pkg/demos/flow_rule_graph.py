"""Non-associated Drucker-Prager flow as the graph of a bipotential.

Builds flow pairs (rate, stress) from a multiplier, a deviatoric direction
and a mean stress, checks that they sit on the graph of the plastic
bipotential, and shows what goes wrong when the sign of the coupling
constant C2 is flipped.

Run:  python demos/flow_rule_graph.py
"""
import numpy as np

from bipotentials import samplers as S
from bipotentials.core import axiom_audit
from bipotentials.materials import DruckerPragerParams, flow_pair
from bipotentials.tensors import mnorm, random_deviatoric_direction

rng = np.random.default_rng(0)
params = DruckerPragerParams.from_degrees(1.0, 30.0, 10.0, 1.0)
print(f"C1 = {params.C1:.4f}  C2 = {params.C2:.4f}")

n = 1000
lam = 10.0 ** rng.uniform(-3, 1, n)
s_m = params.C1 - 6.0 * rng.uniform(0, 1, n)
(e_m, e), (sm, s) = flow_pair(params, lam, random_deviatoric_direction(rng, n), s_m)

# dilatancy: the volumetric rate follows the dilatancy angle, not the friction angle
ratio = e_m / mnorm(e)
print(f"tr(rate) / |dev rate| = {ratio.min():.6f} (k_d tan(theta) = "
      f"{params.k_d * params.tan_theta:.6f})")

b = S.plastic_prime(params)
x, y = np.column_stack([e_m, e]), np.column_stack([sm, s])
print(f"max graph gap on {n} flow pairs: {b.gap(x, y).max():.2e}")

rep = axiom_audit(b, S.prime_sampler(params), rng=rng)
print(f"audit of {rep['name']}: {rep['evaluations']} evaluations, passed={rep['passed']}")

flipped = S.plastic_prime(params, c2=-params.C2)
rep = axiom_audit(flipped, S.prime_sampler(params), rng=rng, checks=("inequality",))
print(f"audit with C2 flipped: {rep['inequality']['violations']} inequality "
      f"violations, worst margin {rep['inequality']['worst_margin']:.3e}")
