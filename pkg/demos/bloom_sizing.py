"""How many bits per catalog name a screening filter needs.

Prints the exact and approximate false positive probability at the optimal
number of hash functions, the 0.6185^(m/n) rule of thumb, and a
Monte-Carlo estimate from a real filter, for a 1000-name catalog.
"""
from icnack.plotting import bloom_fp_table

print(f"{'m/n':>4} {'k':>3} {'exact':>11} {'approx':>11} {'0.6185^m/n':>11} {'measured':>9}")
for r in bloom_fp_table(n=1000, ratios=[2, 4, 6, 8, 10, 12], samples=50_000, seed=1):
    print(f"{r['m_over_n']:>4} {r['k']:>3} {r['fp_exact']:>11.3e} {r['fp_approx']:>11.3e} "
          f"{r['fp_optimal']:>11.3e} {r['monte_carlo']:>9.2e}")
