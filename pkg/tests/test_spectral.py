import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlkl import (
    DomainMismatchError,
    InvalidArgumentError,
    KLBasis,
    PiecewiseField,
    RankDeficientError,
    SnapshotSet,
    build_grid_domain,
    fit_snapshots,
    inner_product,
    kl_coefficients,
    truncate_reconstruct,
)

from conftest import synthetic


def dense_covariance_eigs(dom, values):
    """Eigenvalues of the measure-weighted sample covariance, assembled value by value."""
    S = values.shape[0]
    flat = values.reshape(S, -1)
    centered = flat - flat.mean(axis=0)
    cov = np.zeros((flat.shape[1], flat.shape[1]))
    for s in range(S):
        cov += np.outer(centered[s], centered[s])
    cov /= S
    w = np.sqrt(np.repeat(dom.measures, dom.q))
    return np.sort(np.linalg.eigvalsh(w[:, None] * cov * w[None, :]))[::-1]


def gram(kl):
    return np.array([[inner_product(a, b) for b in kl.eigenfields] for a in kl.eigenfields])


class TestFitSnapshots:
    def test_identical_frames_rank_zero(self):
        dom = build_grid_domain(3, 3)
        frames = np.ones((5, 9, 1))
        with pytest.raises(RankDeficientError) as err:
            fit_snapshots(SnapshotSet(dom, frames), 1)
        assert err.value.rank == 0

    def test_plus_minus_f(self, rng):
        dom = build_grid_domain(3, 2, 1.5, 2)
        f = PiecewiseField(dom, rng.standard_normal((6, 2)))
        kl = fit_snapshots(SnapshotSet(dom, [f, -f]), 1)
        # Gram [[a, -a], [-a, a]] / 2 with a = (f, f): eigenvalues a and 0
        a = inner_product(f, f)
        np.testing.assert_allclose(kl.mean.values, 0.0, atol=1e-15)
        assert kl.lambdas[0] == pytest.approx(a, rel=1e-12)
        phi = kl.eigenfields[0]
        unit = f * (1.0 / np.sqrt(a))
        assert abs(inner_product(phi, unit)) == pytest.approx(1.0, abs=1e-12)
        # M equals the rank here, so the tail falls back to lambda_M
        assert kl.t_M == pytest.approx(a)
        with pytest.raises(RankDeficientError) as err:
            fit_snapshots(SnapshotSet(dom, [f, -f]), 2)
        assert err.value.rank == 1

    def test_prescribed_spectrum_recovery(self):
        # One draw of 500 snapshots has about 6% relative sampling error per
        # eigenvalue, so the 15% band is checked mode by mode across replicates.
        lambdas = 2.0 ** -np.arange(1, 9)
        rel = []
        for rep in range(10):
            dom, gen = synthetic(16, 16, 1, lambdas, seed=100 + rep)
            kl = fit_snapshots(SnapshotSet(dom, gen.draw(500, 1000 + rep)), 5)
            rel.append(np.abs(kl.lambdas - lambdas[:5]) / lambdas[:5])
        rel = np.array(rel)
        assert np.all(np.mean(rel < 0.15, axis=0) >= 0.8)
        assert np.all(rel.mean(axis=0) < 0.15)

    @pytest.mark.parametrize("shape", [(3, 4, 1), (2, 5, 3), (4, 5, 3), (2, 3, 6)])
    def test_dense_covariance_equivalence(self, rng, shape):
        rows, cols, q = shape
        assert rows * cols * q <= 60
        dom = build_grid_domain(rows, cols, 1.0, q)
        dom = type(dom)(rng.uniform(0.2, 3.0, dom.n_cells), dom.barycenters, q)
        S = 25
        values = rng.standard_normal((S, rows * cols, q)) * rng.uniform(0.1, 2.0, (1, rows * cols, q))
        kl = fit_snapshots(SnapshotSet(dom, values), 5)
        dense = dense_covariance_eigs(dom, values)
        r = min(S - 1, dom.n_dofs)
        np.testing.assert_allclose(kl.spectrum, dense[:r], rtol=1e-8)
        np.testing.assert_allclose(kl.lambdas, dense[:5], rtol=1e-8)

    def test_orthonormal_sorted_signfixed(self, rng):
        dom, gen = synthetic(8, 8, 3, 1.0 / np.arange(1, 30) ** 2, seed=4)
        kl = fit_snapshots(SnapshotSet(dom, gen.draw(60, rng)), 20)
        assert np.abs(gram(kl) - np.eye(20)).max() <= 1e-10
        assert np.all(np.diff(kl.lambdas) <= 1e-12)
        for f in kl.eigenfields:
            v = f.values.reshape(-1)
            assert v[np.argmax(np.abs(v))] > 0
        assert kl.t_M == pytest.approx(kl.spectrum[20:].sum())
        assert kl.s_M == pytest.approx(np.sqrt(kl.spectrum[20:]).sum())

    def test_lambda_m_tail_mode(self, rng):
        dom, gen = synthetic(5, 5, 1, 0.7 ** np.arange(10), seed=2)
        kl = fit_snapshots(SnapshotSet(dom, gen.draw(40, rng)), 4, tail_mode="lambda_m")
        assert kl.t_M == kl.lambdas[-1]
        assert kl.s_M == pytest.approx(np.sqrt(kl.lambdas[-1]))
        with pytest.raises(InvalidArgumentError):
            fit_snapshots(SnapshotSet(dom, gen.draw(5, rng)), 2, tail_mode="bogus")

    def test_coefficients_decorrelated(self, rng):
        dom, gen = synthetic(6, 6, 2, 0.8 ** np.arange(20), seed=9)
        S = 400
        snaps = SnapshotSet(dom, gen.draw(S, rng))
        kl = fit_snapshots(snaps, 6)
        Y = np.array([kl_coefficients(f, kl) for f in snaps.frames])
        assert np.abs(Y.T @ Y / S - np.eye(6)).max() <= 5 / np.sqrt(S)

    def test_snapshot_domain_mismatch(self):
        a, b = build_grid_domain(2, 2), build_grid_domain(2, 3)
        with pytest.raises(DomainMismatchError):
            SnapshotSet(a, [PiecewiseField.zeros(a), PiecewiseField.zeros(b)])


class TestCoefficients:
    @pytest.fixture
    def kl(self, rng):
        dom, gen = synthetic(5, 4, 2, 0.6 ** np.arange(12), seed=3, mean=[1.0, -2.0])
        return fit_snapshots(SnapshotSet(dom, gen.draw(50, rng)), 5)

    def test_mean_gives_zero(self, kl):
        np.testing.assert_allclose(kl_coefficients(kl.mean, kl), 0.0, atol=1e-12)

    def test_unit_first_mode(self, kl):
        field = kl.mean + kl.eigenfields[0] * np.sqrt(kl.lambdas[0])
        np.testing.assert_allclose(kl_coefficients(field, kl), np.eye(kl.M)[0], atol=1e-10)

    def test_projection_oracle(self, kl, rng):
        field = PiecewiseField(kl.domain, rng.standard_normal((20, 2)))
        Y = kl_coefficients(field, kl)
        synth = kl.mean
        for k, phi in enumerate(kl.eigenfields):
            synth = synth + phi * (np.sqrt(kl.lambdas[k]) * Y[k])
        # projection via least squares on the weighted eigenfield matrix
        A = kl.coords
        c, *_ = np.linalg.lstsq(A, (field - kl.mean).coords(), rcond=None)
        oracle = kl.mean + PiecewiseField.from_coords(kl.domain, A @ c)
        assert np.abs(synth.values - oracle.values).max() <= 1e-10
        assert np.abs(truncate_reconstruct(field, kl).values - oracle.values).max() <= 1e-10

    def test_residual_orthogonal(self, kl, rng):
        field = PiecewiseField(kl.domain, rng.standard_normal((20, 2)))
        resid = field - truncate_reconstruct(field, kl)
        for phi in kl.eigenfields:
            assert abs(inner_product(resid, phi)) <= 1e-10

    def test_in_span_reconstructs(self, kl, rng):
        field = kl.mean
        for phi in kl.eigenfields:
            field = field + phi * rng.standard_normal()
        assert np.abs(truncate_reconstruct(field, kl).values - field.values).max() <= 1e-10

    def test_orthogonal_part_dropped(self, kl, rng):
        g = rng.standard_normal(kl.domain.n_dofs)
        g -= kl.coords @ (kl.coords.T @ g)
        field = kl.mean + PiecewiseField.from_coords(kl.domain, g)
        assert np.abs(truncate_reconstruct(field, kl).values - kl.mean.values).max() <= 1e-10

    def test_zero_variance_mode_absent(self):
        dom = build_grid_domain(2, 1)
        kl = KLBasis.from_eigenpairs(dom, None, [1.0, 0.0], np.eye(2))
        Y = kl_coefficients(PiecewiseField(dom, np.array([[3.0], [4.0]])), kl)
        assert Y[0] == 3.0 and np.isnan(Y[1])

    def test_mismatch(self, kl):
        with pytest.raises(DomainMismatchError):
            kl_coefficients(PiecewiseField.zeros(build_grid_domain(1, 1)), kl)


def test_truncation_optimality_monte_carlo():
    lambdas = 0.75 ** np.arange(1, 25)
    M = 6
    dom, gen = synthetic(10, 10, 1, lambdas, seed=21)
    kl = fit_snapshots(SnapshotSet(dom, gen.draw(3000, 22)), M)
    fields = gen.draw(1000, 23)
    centered = dom.to_coords(fields - kl.mean.values)
    resid = centered - (centered @ kl.coords) @ kl.coords.T
    mse = float(np.mean(np.sum(resid**2, axis=1)))
    tail = lambdas[M:].sum()
    assert abs(mse - tail) <= 0.10 * tail


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_fit_invariants(S, q, seed):
    rng = np.random.default_rng(seed)
    dom = build_grid_domain(3, 3, 0.5, q)
    values = rng.standard_normal((S, 9, q))
    snaps = SnapshotSet(dom, values)
    rank = min(S - 1, dom.n_dofs)
    M = int(rng.integers(1, rank + 1))
    kl = fit_snapshots(snaps, M)
    assert np.abs(kl.coords.T @ kl.coords - np.eye(M)).max() <= 1e-10
    assert np.all(np.diff(kl.spectrum) <= 1e-12)
    assert kl.t_M >= 0 and kl.s_M >= 0
    # total variance is preserved by the spectrum
    total = np.sum(dom.to_coords(values - values.mean(axis=0)) ** 2) / S
    assert kl.spectrum.sum() == pytest.approx(total, rel=1e-10)
