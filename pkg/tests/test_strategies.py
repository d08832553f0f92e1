import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratquery.acquisition import AFConfig
from stratquery.gp import GPHyperparams, posterior_region
from stratquery.oracle import PrivacyConfig, open_session
from stratquery.regions import Bounds, Dataset, Region, contains_mask
from stratquery.strategies import (
    AffineMap,
    InsufficientBudget,
    MarginalCountModel,
    StrategicRunConfig,
    TargetingPolicy,
    _inside_suppressed,
    bins_for_budget,
    policy_from_posterior,
    run_strategic,
    run_uniform,
    uniform_plan,
)

CUBE = Bounds.cube(0.0, 100.0, 3)


def grid_dataset(effect, n_side=12, seed=0):
    """Rows on a regular 2-D lattice; both arms at every lattice point, outcome = W * effect(x)."""
    g = (np.arange(n_side) + 0.5) / n_side
    pts = np.array([(a, b) for a in g for b in g])
    X = np.repeat(pts, 2, axis=0)
    W = np.tile([1, 0], len(pts))
    Y = W * effect(X)
    return Dataset(X, W, Y)


def test_uniform_plan_examples():
    cells = uniform_plan(CUBE, (2, 2, 2))
    assert len(cells) == 8
    assert all(np.allclose(c.widths, 50.0) for c in cells)
    assert len(uniform_plan(CUBE, (5, 5, 5))) == 125
    assert uniform_plan(CUBE, (1, 1, 1)) == [Region(CUBE.lo, CUBE.hi)]
    with pytest.raises(ValueError):
        uniform_plan(CUBE, (0, 1, 1))


@pytest.mark.parametrize("q,bins", [(8, [2, 2, 2]), (27, [3, 3, 3]), (64, [4, 4, 4]), (125, [5, 5, 5]), (30, [3, 3, 3]), (36, [4, 3, 3])])
def test_bins_for_budget(q, bins):
    assert bins_for_budget(q, 3) == bins


def test_uniform_all_positive_treats_everywhere():
    data = grid_dataset(lambda X: np.full(len(X), 0.5))
    s = open_session(data, PrivacyConfig(4, 0.0))
    policy, recs = run_uniform(s, Bounds.cube(0, 1, 2), (2, 2), cost=0.01)
    assert policy.actions.all() and len(recs) == 4


def test_uniform_matches_brute_force_cell_means():
    def effect(X):
        return X[:, 0] - X[:, 1] + 0.05

    data = grid_dataset(effect)
    bounds = Bounds.cube(0, 1, 2)
    s = open_session(data, PrivacyConfig(9, 0.0))
    policy, _ = run_uniform(s, bounds, (3, 3), cost=0.02)
    expected = []
    for cell in uniform_plan(bounds, (3, 3)):
        inside = contains_mask(cell, data.covariates) & (data.treatment == 1)
        expected.append(effect(data.covariates[inside]).mean() - 0.02 > 0)
    assert policy.actions.ravel().tolist() == expected


def test_uniform_suppressed_cell_is_control():
    data = grid_dataset(lambda X: np.full(len(X), 1.0), n_side=4)
    s = open_session(data, PrivacyConfig(4, 0.0, min_count=9))
    policy, recs = run_uniform(s, Bounds.cube(0, 1, 2), (2, 2))
    # each quadrant holds 8 rows, below the minimum
    assert all(r.suppressed for r in recs)
    assert not policy.actions.any()


def test_uniform_insufficient_budget_issues_nothing():
    data = grid_dataset(lambda X: np.zeros(len(X)))
    s = open_session(data, PrivacyConfig(3, 0.0))
    with pytest.raises(InsufficientBudget):
        run_uniform(s, Bounds.cube(0, 1, 2), (2, 2))
    assert s.queries_used == 0


def test_strategic_single_suppressed_query_gives_all_control():
    data = grid_dataset(lambda X: np.ones(len(X)), n_side=3)
    s = open_session(data, PrivacyConfig(1, 0.0, min_count=10_000))
    cfg = StrategicRunConfig(AFConfig(candidate_count=20), GPHyperparams(1.0, (0.3, 0.3)), cost=0.01, resolution=4)
    policy, recs, trace = run_strategic(s, Bounds.cube(0, 1, 2), cfg, 0)
    assert recs[0].suppressed and len(trace.states[0]) == 0
    assert not policy.actions.any()


def test_strategic_one_query_policy_matches_posterior():
    data = grid_dataset(lambda X: np.full(len(X), 2.0))
    bounds = Bounds.cube(0, 1, 2)
    s = open_session(data, PrivacyConfig(1, 0.01, seed=4))
    hyper = GPHyperparams(1.0, (0.4, 0.4), 0.05)
    cfg = StrategicRunConfig(AFConfig(size_mode="constraint", f_min=0.5, f_max=0.9, candidate_count=50), hyper, resolution=5)
    policy, recs, trace = run_strategic(s, bounds, cfg, 1)
    assert recs[0].noisy_result > 1.9
    state = trace.states[-1]
    for cell, action in zip(policy.cells(), policy.actions.ravel()):
        assert action == (posterior_region(state, cell)[0] > 0)
    assert policy.actions.any()


def test_strategic_deterministic():
    data = grid_dataset(lambda X: np.sin(6 * X[:, 0]) * 0.5)
    bounds = Bounds.cube(0, 1, 2)
    cfg = StrategicRunConfig(AFConfig(size_mode="constraint", candidate_count=100), GPHyperparams(0.25, (0.3, 0.3), 0.01), cost=0.01)
    out = []
    for _ in range(2):
        s = open_session(data, PrivacyConfig(6, 0.1, seed=2))
        policy, recs, _ = run_strategic(s, bounds, cfg, 5)
        out.append((policy.actions.tolist(), [r.region for r in recs]))
    assert out[0] == out[1]


def test_strategic_skips_boxes_inside_suppressed_regions():
    data = grid_dataset(lambda X: X[:, 0] - 0.5, n_side=6)
    bounds = Bounds.cube(0, 1, 2)
    s = open_session(data, PrivacyConfig(8, 0.0, min_count=30, seed=0))
    cfg = StrategicRunConfig(AFConfig(candidate_count=200), GPHyperparams(0.25, (0.3, 0.3), 0.01))
    _, recs, _ = run_strategic(s, bounds, cfg, 3)
    for i, r in enumerate(recs):
        earlier = [p.region for p in recs[:i] if p.suppressed]
        lo, hi = np.array([r.region.lo]), np.array([r.region.hi])
        assert not _inside_suppressed(lo, hi, earlier)[0]


def test_strategic_count_model_keeps_queries_answerable():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4000, 2))
    W = rng.integers(0, 2, 4000)
    data = Dataset(X, W, W * 0.1)
    bounds = Bounds(X.min(axis=0), X.max(axis=0))
    cm = MarginalCountModel.from_data(X)
    cfg = StrategicRunConfig(AFConfig(candidate_count=300), GPHyperparams(0.01, (1.0, 1.0), 0.01), count_model=cm, count_scaled_noise=True)
    s = open_session(data, PrivacyConfig(10, 0.01, min_count=50, seed=0))
    _, recs, trace = run_strategic(s, bounds, cfg, 0)
    assert sum(r.suppressed for r in recs) <= 2
    obs = trace.states[-1].observations
    for o, r in zip(obs, [r for r in recs if not r.suppressed]):
        assert o.noise_weight == pytest.approx(1 / r.treated_count + 1 / r.control_count)


def test_count_scaled_noise_needs_counts():
    data = grid_dataset(lambda X: np.zeros(len(X)))
    s = open_session(data, PrivacyConfig(1, 0.0, disclose_count=False))
    cfg = StrategicRunConfig(AFConfig(size_mode="constraint", candidate_count=10), GPHyperparams(1.0, (0.3, 0.3)), count_scaled_noise=True)
    with pytest.raises(ValueError):
        run_strategic(s, Bounds.cube(0, 1, 2), cfg, 0)


def test_marginal_count_model_hand_example():
    # percentiles 0, 1/3, 2/3, 1 at values 0, 0, 1, 2
    cm = MarginalCountModel.from_quantiles(300, [[0.0, 0.0, 1.0, 2.0]])
    assert cm.expected_counts([[0.0]], [[0.0]])[0] == pytest.approx(100)
    assert cm.expected_counts([[0.0]], [[0.5]])[0] == pytest.approx(150)
    assert cm.expected_counts([[0.5]], [[1.5]])[0] == pytest.approx(100)
    assert cm.expected_counts([[-5.0]], [[5.0]])[0] == pytest.approx(300)
    assert cm.expected_counts([[3.0]], [[4.0]])[0] == pytest.approx(0)


def test_marginal_count_model_vs_brute_force():
    rng = np.random.default_rng(1)
    n = 20_000
    a = np.where(rng.random(n) < 0.3, 1.0, rng.gamma(2.0, 1.5, n))
    b = rng.normal(size=n)
    X = np.column_stack([a, b])
    cm = MarginalCountModel.from_data(X)
    lo = np.column_stack([rng.uniform(0, 4, 200), rng.uniform(-2, 1, 200)])
    hi = lo + rng.uniform(0.1, 3, size=(200, 2))
    est = cm.expected_counts(lo, hi)
    pa = [np.mean((a >= l) & (a <= h)) for l, h in zip(lo[:, 0], hi[:, 0])]
    pb = [np.mean((b >= l) & (b <= h)) for l, h in zip(lo[:, 1], hi[:, 1])]
    # independent features: the product of exact marginal shares is the target
    np.testing.assert_allclose(est, n * np.array(pa) * np.array(pb), atol=0.004 * n)


def test_inside_suppressed():
    sup = [Region((0, 0), (0.5, 0.5))]
    lo = np.array([[0.1, 0.1], [0.4, 0.4], [0.0, 0.0]])
    hi = np.array([[0.2, 0.2], [0.6, 0.5], [0.5, 0.5]])
    assert _inside_suppressed(lo, hi, sup).tolist() == [True, False, True]
    assert not _inside_suppressed(lo, hi, []).any()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.integers(0, 2**32 - 1))
def test_policy_cells_partition_bounds(bins, seed):
    rng = np.random.default_rng(seed)
    ndim = len(bins)
    bounds = Bounds(np.zeros(ndim), rng.uniform(1, 5, ndim))
    policy = TargetingPolicy.uniform_grid(bounds, bins, rng.random(np.prod(bins)) < 0.5)
    pts = rng.uniform(bounds.lo, bounds.hi, size=(200, ndim))
    # include edges and the top corner
    pts = np.vstack([pts, np.asarray(bounds.hi)[None], np.asarray(bounds.lo)[None]])
    cells = policy.cells()
    hits = np.zeros(len(pts), dtype=int)
    for cell, act in zip(cells, policy.actions.ravel()):
        top = np.isclose(np.asarray(cell.hi), np.asarray(bounds.hi))
        inside = np.all((pts >= cell.lo) & ((pts < cell.hi) | (top & (pts <= cell.hi))), axis=1)
        hits += inside
        assert np.all(policy.assign(pts[inside]) == act)
    assert np.all(hits == 1)
    vol = sum(np.prod(c.widths) for c in cells)
    assert vol == pytest.approx(np.prod(bounds.widths))


def test_assign_clip():
    policy = TargetingPolicy.uniform_grid(Bounds.cube(0, 1, 1), [2], [True, False])
    with pytest.raises(ValueError):
        policy.assign([[1.5]])
    assert policy.assign([[-3.0], [1.5], [0.2]], clip=True).tolist() == [True, False, True]


def test_policy_roundtrip(tmp_path):
    policy = TargetingPolicy.uniform_grid(Bounds.cube(0, 1, 2), [2, 3], [1, 0, 1, 0, 0, 1])
    path = tmp_path / "p.json"
    policy.save(path)
    back = TargetingPolicy.load(path)
    assert back.actions.tolist() == policy.actions.tolist()
    assert all(np.array_equal(a, b) for a, b in zip(back.edges, policy.edges))


def test_affine_map_roundtrip():
    m = AffineMap((1.0, -2.0), (2.0, 0.5))
    lo, hi = m.to_model([3.0, -1.0], [5.0, 0.0])
    np.testing.assert_allclose(lo, [1.0, 2.0])
    back = m.from_model(lo, hi)
    np.testing.assert_allclose(back[1], [5.0, 0.0])


def test_policy_from_posterior_prior_is_control():
    from stratquery.gp import empty_state

    p = policy_from_posterior(empty_state(GPHyperparams(1.0, (1.0,)), 1), Bounds.cube(0, 1, 1), 4, cost=0.01)
    assert p.shape == (4,) and not p.actions.any()
    with pytest.raises(ValueError):
        StrategicRunConfig(resolution=0)
