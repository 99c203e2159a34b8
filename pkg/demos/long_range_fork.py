"""Stolen keys do not buy hashpower: a rewrite costs as much work as the original chain."""

from fractions import Fraction

from pocsim.analysis import fork_success_prob, rebuild_time
from pocsim.fork_attack import ForkParams, replacement_frequencies, run_fork_attack

for m, h in ((1, 1), (1, 2), (2, 1)):
    r = run_fork_attack(ForkParams(m=m, h=h, length=200, seed=0))
    print(f"m/h = {Fraction(m, h)}: rebuild took {r.ratio:.2f}x the honest span "
          f"(model {rebuild_time(1, m, h)}), adversary caught up: {r.caught_up}")

rep = replacement_frequencies(seed=0, trials=1000)
print("replacing b blocks with half the nonce space:")
for b, (seen, model) in enumerate(zip(rep.frequencies, rep.model)):
    print(f"  b={b}: measured {seen:.3f}  model {model:.3f}")
print(f"b=7 by the model: {fork_success_prob(7)} = {float(fork_success_prob(7)):.5%}")
