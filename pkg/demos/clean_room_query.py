"""Query a private dataset through the noisy clean-room interface.

The advertiser only ever sees noisy treated-minus-control differences for
boxes it asks about, plus arm counts. It spends a few queries, fits a GP to
the answers, and evaluates the resulting policy by IPW on a held-out split
against treat-everyone.
"""

import tempfile
from pathlib import Path

import numpy as np

from stratquery import (
    CSVSchema, FitConfig, PrivacyConfig, StrategicRunConfig, collapse_features,
    ingest_csv, ipw_lift, open_session, empirical_af, run_strategic, run_uniform,
)
from stratquery.regions import Bounds
from stratquery.simulation import CRITEO_FEATURES, write_criteo_like_csv
from stratquery.strategies import AffineMap, MarginalCountModel, bins_for_budget
tmp = Path(tempfile.mkdtemp())
write_criteo_like_csv(tmp / "campaign.csv", 60_000, 3)

schema = CSVSchema(CRITEO_FEATURES, "treatment", "visit", 0.85)
data = collapse_features(ingest_csv(tmp / "campaign.csv", schema), ["f0", "f6"], sum_rest=True)
rng = np.random.default_rng(0)
idx = rng.permutation(len(data))
train, held_out = data.subset(idx[:30_000]), data.subset(idx[30_000:])

X = train.covariates
bounds = Bounds(X.min(axis=0), X.max(axis=0))
cost, budget, noise = 0.01, 27, 0.01

uniform_session = open_session(train, PrivacyConfig(budget, noise, min_count=20, seed=1))
uniform_policy, uniform_log = run_uniform(uniform_session, bounds, bins_for_budget(budget, 3), cost)
answered = sum(not r.suppressed for r in uniform_log)
print(f"uniform grid: {answered} of {budget} boxes answered, the rest fell under the count floor")

# the strategic advertiser gets as many answered queries as the grid did
config = StrategicRunConfig(
    af=empirical_af(),
    fit=FitConfig(activation_step=10, initial_noise_sd=noise + 0.01),
    cost=cost,
    model_map=AffineMap(tuple(X.mean(axis=0)), tuple(X.std(axis=0))),
    count_model=MarginalCountModel.from_data(X),
    count_scaled_noise=True,
)
strategic_session = open_session(train, PrivacyConfig(answered, noise, min_count=20, seed=2))
strategic_policy, strategic_log, _ = run_strategic(strategic_session, bounds, config, rng)

for name, policy in (("uniform", uniform_policy), ("strategic", strategic_policy)):
    acts = policy.assign(held_out.covariates, clip=True)
    lift, se = ipw_lift(acts, held_out, cost)
    print(f"{name:>9}: treats {acts.mean():.0%}, lift over treat-all {lift:+.4f} (se {se:.4f})")

print("first strategic queries:")
for rec in strategic_log[:3]:
    print("  ", np.round(rec.region.lo, 2), np.round(rec.region.hi, 2), rec.noisy_result)
