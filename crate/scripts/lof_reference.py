"""Freeze scikit-learn LOF scores (Manhattan metric) for fixed points."""
import json
import sys

import numpy as np
import sklearn
from sklearn.neighbors import LocalOutlierFactor

rng = np.random.default_rng(7)
reference = rng.uniform(0, 1, size=(40, 3))
queries = np.vstack([rng.uniform(0, 1, size=(10, 3)), [[3.0, 3.0, 3.0]], reference[:2]])
cases = []
for k in (1, 3, 5, 10):
    lof = LocalOutlierFactor(n_neighbors=k, novelty=True, metric="manhattan").fit(reference)
    cases.append({"k": k, "lof": (-lof.score_samples(queries)).tolist()})
json.dump(
    {"sklearn": sklearn.__version__, "reference": reference.tolist(), "queries": queries.tolist(), "cases": cases},
    sys.stdout,
    indent=1,
)
