"""
Lookup latency as the rule count grows
======================================

Per-lookup timings for the hashed lookup and for a linear scan. Absolute
numbers depend on the machine; the shape of the curve is the point.
"""

# %%
from quicknat.bench import Algorithm, emit_report, run_lookup_bench

results = []
for n in (100, 1000, 10000):
    results.append(run_lookup_bench(n, 20_000, Algorithm.QNS, seed=7, warmup=2_000))
    results.append(run_lookup_bench(n, 1_000, Algorithm.LINEAR, seed=7, warmup=100))
print(emit_report(results))

# %%
qns = {r.rule_count: r.mean_ns for r in results if r.algorithm is Algorithm.QNS}
lin = {r.rule_count: r.mean_ns for r in results if r.algorithm is Algorithm.LINEAR}
print("hashed 10k/100:  %.2f" % (qns[10000] / qns[100]))
print("linear 10k/100:  %.1f" % (lin[10000] / lin[100]))
print("timer baseline:  %.0f ns" % results[0].baseline_ns)
