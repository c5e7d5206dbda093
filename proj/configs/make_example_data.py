"""Regenerates the small CSVs under configs/data used by the fit/evaluate examples."""
import numpy as np

rng = np.random.default_rng(7)
p, n, N = 6, 120, 600
Sigma = 0.5 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
theta = np.array([1.0, -1.1, 0.2, -0.025, 0.0, 0.1])


def draw(rows):
    X = rng.multivariate_normal(np.zeros(p), Sigma, size=rows)
    y = X @ theta + rng.normal(0.0, 1.0, rows)
    # A pre-computed black-box prediction: biased and noisy.
    ext = X @ theta + 0.3 + rng.normal(0.0, 0.5, rows)
    return X, y, ext


names = [f"x{j + 1}" for j in range(p - 1)]  # x6 is never observed
X, y, ext = draw(n)
Xu, _, extu = draw(N)
fmt = "%.6f"
np.savetxt("data/labeled.csv", np.column_stack([X[:, :5], y, ext]), delimiter=",", fmt=fmt,
           header=",".join(names + ["y", "ml_ext"]), comments="")
np.savetxt("data/unlabeled.csv", np.column_stack([Xu[:, :5], extu]), delimiter=",", fmt=fmt,
           header=",".join(names + ["ml_ext"]), comments="")
np.savetxt("data/new_rows.csv", Xu[:10, :5], delimiter=",", fmt=fmt, header=",".join(names), comments="")
