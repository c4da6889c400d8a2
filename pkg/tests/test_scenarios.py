import numpy as np
import pytest

from gridlearn.scenarios import (DistributionSpec, Family, LabeledDataset, LoadScenario, SplitPolicy,
                                 correlation, fit, label, mvn_spec, read_dataset_jsonl,
                                 read_scenarios_csv, regularized_cholesky, sample, sample_matrix,
                                 split, write_dataset_jsonl, write_scenarios_csv)


def _random_cov(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + 0.1 * np.eye(d)


def _history(rng, n=500, d=3):
    mean = np.concatenate([np.full(d, 1.0), np.full(d, 0.3)])
    cov = _random_cov(rng, 2 * d) * 0.01
    x = rng.multivariate_normal(mean, cov, n)
    return [LoadScenario.from_vector(r, tag=k) for k, r in enumerate(x)], mean, cov


def test_mvn_covariance_recovery():
    rng = np.random.default_rng(0)
    for d in (2, 6, 12):
        cov = _random_cov(rng, d)
        spec = mvn_spec(rng.standard_normal(d), cov)
        x = sample_matrix(spec, 10_000, seed=d)
        err = np.linalg.norm(np.cov(x, rowvar=False) - cov) / np.linalg.norm(cov)
        assert err <= 0.05


def test_uniform_never_out_of_bounds():
    rng = np.random.default_rng(1)
    lo = rng.random(12)
    hi = lo + rng.random(12)
    hi[3] = lo[3]  # degenerate coordinate
    spec = DistributionSpec(Family.UNIFORM_INDEP, {"lo": lo, "hi": hi})
    for seed in range(5):
        x = sample_matrix(spec, 20_000, seed)
        assert np.all(x >= lo) and np.all(x <= hi)


@pytest.mark.parametrize("family", list(Family))
def test_bit_identical_resampling(family):
    hist, _, _ = _history(np.random.default_rng(2))
    spec = fit(family, hist)
    a = sample_matrix(spec, 1000, seed=123)
    b = sample_matrix(DistributionSpec.from_json(spec.to_json()), 1000, seed=123)
    assert a.tobytes() == b.tobytes()
    assert sample_matrix(spec, 1000, seed=124).tobytes() != a.tobytes()


def test_fit_families():
    hist, mean, cov = _history(np.random.default_rng(3), n=5000)
    x = np.stack([s.vector for s in hist])
    u = fit("UNIFORM_INDEP", hist)
    np.testing.assert_array_equal(u.params["lo"], x.min(axis=0))
    n = fit("NORMAL_INDEP", hist)
    np.testing.assert_allclose(n.params["std"], x.std(axis=0, ddof=1))
    m = fit("MVN", hist)
    np.testing.assert_allclose(m.params["cov"], np.cov(x, rowvar=False))
    np.testing.assert_allclose(m.params["chol"] @ m.params["chol"].T, m.params["cov"], atol=1e-9)
    with pytest.raises(ValueError):
        fit("MVN", hist[:1])


def test_regularized_cholesky_on_singular():
    v = np.array([1.0, 2.0, 3.0])
    cov = np.outer(v, v)  # rank one
    lo = regularized_cholesky(cov)
    assert np.allclose(lo @ lo.T, cov, atol=1e-6)
    assert np.array_equal(regularized_cholesky(np.zeros((2, 2))), np.zeros((2, 2)))


def test_correlation():
    p = [np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.1, 5.0]), np.array([3.0, 6.0, 7.2])]
    hist = [LoadScenario(x, x * 0.1) for x in p]
    assert correlation(hist, 0, 1) == pytest.approx(np.corrcoef([1, 2, 3], [2, 4.1, 6])[0, 1])
    assert correlation(hist, 5, 7, pq_ids=[5, 6, 7]) == pytest.approx(np.corrcoef([1, 2, 3], [3, 5, 7.2])[0, 1])
    flat = [LoadScenario(np.array([1.0, k]), np.zeros(2)) for k in range(3)]
    with pytest.raises(ValueError):
        correlation(flat, 0, 1)


def _scen(net, factors):
    p, q = net.nominal_loads()
    return [LoadScenario(p * f, q * f, tag=k) for k, f in enumerate(factors)]


def test_label_excludes_failures_and_is_job_invariant(case2):
    scen = _scen(case2, [0.5, 1.0, 60.0, 1.2])
    ds = label(scen, case2, batch_size=2)
    assert ds.excluded == [2] and ds.indices == [0, 1, 3]
    par = label(scen, case2, batch_size=2, jobs=2)
    assert [s.objective for s in par.solutions] == [s.objective for s in ds.solutions]
    one = label(scen, case2, batch_size=1)
    np.testing.assert_allclose([s.objective for s in one.solutions],
                               [s.objective for s in ds.solutions], rtol=1e-12)


def test_split_policies(case3):
    ds = LabeledDataset(_scen(case3, np.linspace(0.8, 1.2, 7))[::-1], [None] * 7)
    tr, te = split(ds, SplitPolicy.FIRST_HALF_TRAIN)
    assert [s.tag for s in tr.scenarios] == [0, 1, 2, 3]
    assert [s.tag for s in te.scenarios] == [4, 5, 6]
    tr, te = split(ds, "ALL")
    assert len(tr) == len(te) == 7 and te.role == "test"
    untagged = LabeledDataset([LoadScenario(np.zeros(1), np.zeros(1))], [None])
    with pytest.raises(ValueError):
        split(untagged, SplitPolicy.FIRST_HALF_TRAIN)


def test_csv_and_jsonl_round_trip(case9, tmp_path):
    scen = _scen(case9, [0.9, 1.0, 1.1])
    write_scenarios_csv(tmp_path / "s.csv", case9, scen)
    back = read_scenarios_csv(tmp_path / "s.csv", case9)
    for a, b in zip(scen, back):
        np.testing.assert_allclose(a.p_load, b.p_load, rtol=1e-15)
        assert a.tag == b.tag
    (tmp_path / "bad.csv").write_text("tag,p_1\n0,1\n")
    with pytest.raises(ValueError, match="columns"):
        read_scenarios_csv(tmp_path / "bad.csv", case9)
    ds = label(scen, case9)
    write_dataset_jsonl(tmp_path / "d.jsonl", ds)
    ds2 = read_dataset_jsonl(tmp_path / "d.jsonl")
    assert ds2.indices == ds.indices
    np.testing.assert_array_equal(ds2.solutions[1].v_mag, ds.solutions[1].v_mag)


def test_sample_wraps_vectors():
    spec = mvn_spec(np.array([1.0, 2.0, 0.1, 0.2]), np.eye(4) * 1e-4)
    s = sample(spec, 3, seed=0)
    assert len(s) == 3 and s[0].p_load.shape == (2,) and s[0].q_load.shape == (2,)
