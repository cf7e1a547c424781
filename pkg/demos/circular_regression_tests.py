"""Fit a von Mises regression and test a slope with all four statistics.

Responses are angles generated from a tan-half link, so the mean direction
is 2·arctan(β1 + β2·x).  The script fits the full model, tests β2 = 0 and
then scans a grid of null values to show where the statistics disagree.

    python3 demos/circular_regression_tests.py
"""

import numpy as np

from dm_testlab import RegressionSpec, builtin_family, builtin_link, fit_full, fit_nested, subset_tests
from dm_testlab.sim import sample

rng = np.random.default_rng(2024)
n = 31
distance = rng.uniform(20, 120, size=n)
X = np.column_stack([np.ones(n), distance])
true_beta = np.array([-0.3, -0.013])

family = builtin_family("von-mises")
link = builtin_link("tan-half")
y = sample(family, link.theta_of_eta(X @ true_beta), 3.0, rng)

spec = RegressionSpec("linear", X, p=2, q=1)
full = fit_full(family, link, spec, y)
se_beta, se_phi = full.standard_errors()
print("estimates (standard errors)")
for name, b, s in zip(("intercept", "slope"), full.beta_hat, se_beta):
    print(f"  {name:<10} {b: .4f} ({s:.4f})")
print(f"  {'phi':<10} {full.phi_hat: .4f} ({se_phi:.4f})")

print("\nH0: slope = 0")
quartet = subset_tests(*fit_nested(family, link, spec, y, [0.0]))
for label, value, pvalue in zip(("LR", "Wald", "score", "gradient"), quartet.values, quartet.pvalues):
    print(f"  {label:<9} {value:8.3f}   p = {pvalue:.4f}")

print("\nnull values near the estimate (p-values)")
print("  beta20     LR      Wald    score   gradient")
for beta20 in np.linspace(full.beta_hat[1] - 0.012, full.beta_hat[1] - 0.004, 5):
    q = subset_tests(*fit_nested(family, link, spec, y, [beta20]))
    print(f"  {beta20: .4f}  " + "  ".join(f"{p:.4f}" for p in q.pvalues))
