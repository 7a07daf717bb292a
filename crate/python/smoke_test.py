#!/usr/bin/env python3
"""Smoke test for the lmmselect_py extension module.

Build the module first:

    cargo build --release -p lmmselect-py

The script copies the fresh cdylib next to itself (importable name) when
needed, then walks one simulate -> fit -> path -> score round trip.
"""

import math
import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
REPO = HERE.parent


def locate_extension():
    """Copies the built cdylib to python/lmmselect_py.so if newer or absent."""
    target = HERE / "lmmselect_py.so"
    candidates = [
        REPO / "target" / "release" / "liblmmselect_py.so",
        REPO / "target" / "debug" / "liblmmselect_py.so",
    ]
    built = [c for c in candidates if c.exists()]
    if not built:
        if target.exists():
            return
        sys.exit(
            "lmmselect_py.so not found; run `cargo build --release -p lmmselect-py` first"
        )
    newest = max(built, key=lambda c: c.stat().st_mtime)
    if not target.exists() or target.stat().st_mtime < newest.stat().st_mtime:
        shutil.copy2(newest, target)


locate_extension()
sys.path.insert(0, str(HERE))

import lmmselect_py as lmm  # noqa: E402

checks = 0


def ok(label):
    global checks
    checks += 1
    print(f"ok: {label}")


# Scenario wiring and determinism.
sc = lmm.Scenario.paper(seed=7, groups=12, obs=4, p_total=8, p_true=2, beta=[1.5, -2.0])
assert sc.n_obs == 48 and sc.n_groups == 12
assert sc.p_total == 8 and sc.p_true == 2
assert sc.beta_true == [1.5, -2.0]
assert sc.covariate_names[:2] == ["sex", "age"]
ok("scenario overrides resolve")

assert lmm.Scenario.replication_seed(1, 0) == lmm.Scenario.replication_seed(1, 0)
assert lmm.Scenario.replication_seed(1, 0) != lmm.Scenario.replication_seed(1, 1)
ok("replication seeds are deterministic and distinct")

sim = sc.simulate()
sim2 = sc.simulate()
data = sim.dataset
assert data.n_obs == 48 and data.n_features == 8 and data.n_groups == 12
assert sim.beta_true == sim2.beta_true
assert sim.true_active == [True, True, False, False, False, False, False, False]
assert len(sim.gamma) == 12
ok("simulation draws the declared shapes, repeatably")

# Round-tripping the same numbers through a hand-built Dataset.
rebuilt = lmm.Dataset(
    y=[float(i % 5) for i in range(9)],
    x=[[float(i), float(i * i % 7)] for i in range(9)],
    groups=[3, 3, 3, 8, 8, 8, 1, 1, 1],
    names=["a", "b"],
)
assert rebuilt.n_groups == 3 and rebuilt.names == ["a", "b"]
ok("datasets build from plain lists")

try:
    lmm.Dataset(y=[1.0, 2.0], x=[[1.0], [1.0, 2.0]], groups=[1, 2])
except ValueError:
    ok("ragged covariate rows are rejected")
else:
    sys.exit("ragged x was accepted")

# One penalized fit. This lambda parks one coefficient in a shallow
# basin where the reweighting contracts slowly, so give the outer loop
# more room than the default hundred iterations.
fitted = lmm.fit(sim.dataset, lambda_=1.0, max_outer=400)
assert fitted.converged, fitted.inner_failure
assert len(fitted.beta) == 8 and len(fitted.theta) == 1
assert fitted.sigma2 > 0.0
assert all(0.0 <= v < 1.0 for v in fitted.selection_indicator)
ok("penalized fit converges and reports its shapes")

# The path and its BIC choice.
swept = lmm.path(sim.dataset, lambda_count=12)
assert len(swept.lambdas) == 12 and swept.lambdas[0] > swept.lambdas[-1]
assert all(swept.converged)
chosen = swept.chosen
assert chosen.bic == min(swept.bics)
assert chosen.active == sim.true_active, (chosen.active_names, chosen.beta)
ok("path recovers the true support and minimizes BIC")

exact, contains, zp = lmm.score_selection(
    chosen.beta, chosen.active, sim.true_active, sim.beta_true
)
assert exact and contains and zp == 1.0
err = lmm.mse(chosen.beta, sim.beta_true)
assert 0.0 < err < 1.0, err
ok("scores agree with the recovered support")

# Plain numeric helpers.
grid = lmm.lambda_grid(0.01, 100.0, 25)
assert len(grid) == 25
assert math.isclose(grid[0], 100.0) and math.isclose(grid[-1], 0.01)
assert lmm.bic(-100.0, 300, 4, 1) == 200.0 + 6.0 * math.log(300.0)
ok("grid and bic helpers match hand values")

print(f"all {checks} smoke checks passed")
