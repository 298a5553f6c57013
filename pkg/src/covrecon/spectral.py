"""Cholesky-transformed symmetric eigenproblem and spectral diagnostics.

The generalized problem S Phi = lambda G Phi with S = G Sigma G is solved
through the congruent symmetric matrix S-tilde = (L^G)^T Sigma L^G, where
G = L^G (L^G)^T is the mass Cholesky factorization.  Eigenvectors transform
back via Phi = (L^G)^{-T} Phi-tilde, which makes the finite element
functions phi_l = Phi_l . theta exactly L2-orthonormal.

Diagnostics compare an exact-discrete spectrum against an estimated one:
Weyl eigenvalue stability, mixed spectral gaps, the spectral-gap condition,
Davis-Kahan subspace ratios, and the mass-spectrum sandwich on the
transformed perturbation norm.
"""

import os
import tempfile

import numpy as np
import scipy.linalg as sla

from .errors import NumericError

SOURCE_EXACT = "ExactDiscrete"
SOURCE_ESTIMATED = "Estimated"


class TransformedStiffness:
    """The congruence transform (L^G)^T Sigma L^G of a covariance matrix."""

    def __init__(self, matrix, source, mass):
        matrix = np.asarray(matrix, dtype=float)
        assert np.array_equal(matrix, matrix.T), \
            "transformed stiffness must be exactly symmetric"
        matrix.setflags(write=False)
        self.matrix = matrix
        self.source = source
        self.mass = mass


def transform(cov, mass, tag=SOURCE_EXACT):
    """Form the symmetrized triple product (L^G)^T Sigma L^G."""
    sigma = cov.matrix if hasattr(cov, "matrix") else np.asarray(cov, dtype=float)
    Q = mass.dof_count
    if sigma.shape != (Q, Q):
        raise ValueError("covariance shape %r does not match dof count %d"
                         % (sigma.shape, Q))
    L = mass.chol
    raw = L.T @ sigma @ L
    return TransformedStiffness(0.5 * (raw + raw.T), tag, mass)


class DiscreteSpectrum:
    """Descending eigenpairs of a transformed stiffness matrix.

    tilde_vectors holds the l2-orthonormal eigenvectors of S-tilde as
    columns; gen_vectors holds the back-transformed generalized vectors
    Phi = (L^G)^{-T} Phi-tilde, whose functions are L2-orthonormal.
    """

    def __init__(self, eigenvalues, tilde_vectors, gen_vectors, source, mass):
        for arr in (eigenvalues, tilde_vectors, gen_vectors):
            arr.setflags(write=False)
        self.eigenvalues = eigenvalues
        self.tilde_vectors = tilde_vectors
        self.gen_vectors = gen_vectors
        self.source = source
        self.mass = mass

    @property
    def dof_count(self):
        return self.eigenvalues.shape[0]


def _dump_matrix(matrix):
    fd, path = tempfile.mkstemp(prefix="stiffness-dump-", suffix=".npy")
    os.close(fd)
    np.save(path, matrix)
    return path


def eigensolve(ts):
    """Full symmetric eigendecomposition of S-tilde, descending, canonical signs.

    The sign of each tilde eigenvector is fixed so its component of largest
    magnitude (first such index on ties) is positive; the generalized
    vectors inherit the same flips.
    """
    try:
        vals, vecs = sla.eigh(ts.matrix)
    except sla.LinAlgError as exc:
        path = _dump_matrix(ts.matrix)
        raise NumericError(
            "symmetric eigensolver failed to converge; offending matrix "
            "saved to %s: %s" % (path, exc))
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.where(vecs[lead, np.arange(vecs.shape[1])] < 0, -1.0, 1.0)
    vecs = vecs * signs
    gen = sla.solve_triangular(ts.mass.chol.T, vecs, lower=False)
    return DiscreteSpectrum(vals, vecs, gen, ts.source, ts.mass)


def spectrum_from_covariance(cov, mass, tag=SOURCE_EXACT):
    """Convenience: transform a covariance matrix and eigensolve it."""
    return eigensolve(transform(cov, mass, tag))


def align_signs(reference, target):
    """Flip target eigenvectors so each pairs nonnegatively with the reference.

    Columns with an exactly zero dot product are left unchanged.  Returns a
    new spectrum; eigenvalues are shared.
    """
    if reference.dof_count != target.dof_count:
        raise ValueError("spectra have mismatched dimensions %d and %d"
                         % (reference.dof_count, target.dof_count))
    dots = np.sum(reference.tilde_vectors * target.tilde_vectors, axis=0)
    signs = np.where(dots < 0, -1.0, 1.0)
    return DiscreteSpectrum(target.eigenvalues.copy(),
                            target.tilde_vectors * signs,
                            target.gen_vectors * signs,
                            target.source, target.mass)


def opnorm_sandwich(mass, cov_diff_norm):
    """Bounds on the transformed-perturbation norm from the mass spectrum.

    ||S-tilde difference|| lies in [lambda_min(G) v, lambda_max(G) v] where
    v is the operator norm of the covariance difference itself.
    """
    if cov_diff_norm < 0:
        raise ValueError("cov_diff_norm must be >= 0, got %r" % (cov_diff_norm,))
    return (mass.lambda_min * cov_diff_norm, mass.lambda_max * cov_diff_norm)


def _operator_norm(A):
    vals = sla.eigh(0.5 * (A + A.T), eigvals_only=True)
    return float(max(abs(vals[0]), abs(vals[-1])))


def _mixed_gaps(exact_vals, est_vals, L):
    """Mixed gaps min{est_{l-1} - exact_l, exact_l - est_{l+1}} in magnitude.

    The estimated sequence is padded with +inf below index 1 and -inf above
    index Q, so boundary gaps stay well defined.
    """
    est_pad = np.concatenate(([np.inf], est_vals, [-np.inf]))
    gaps = np.empty(L)
    for ell in range(1, L + 1):
        left = abs(est_pad[ell - 1] - exact_vals[ell - 1])
        right = abs(exact_vals[ell - 1] - est_pad[ell + 1])
        gaps[ell - 1] = min(left, right)
    return gaps


class SpectralDiagnostics:
    """Joint stability report for an exact and an estimated discrete spectrum."""

    def __init__(self, weyl_bound, eigenvalue_dev, discrete_gaps,
                 continuous_gaps, gap_condition_per_ell, quarter_gap_per_ell,
                 davis_kahan_bounds, sandwich_interval, cov_diff_norm):
        self.weyl_bound = weyl_bound
        self.eigenvalue_dev = eigenvalue_dev
        self.discrete_gaps = discrete_gaps
        self.continuous_gaps = continuous_gaps
        self.gap_condition_per_ell = gap_condition_per_ell
        self.gap_condition_ok = bool(np.all(gap_condition_per_ell))
        self.quarter_gap_per_ell = quarter_gap_per_ell
        self.davis_kahan_bounds = davis_kahan_bounds
        self.sandwich_interval = sandwich_interval
        self.cov_diff_norm = cov_diff_norm
        # the spectral-gap theorem: whenever the condition holds at l, the
        # mixed gap retains at least a quarter of the continuous gap
        self.theorem_consistent = bool(np.all(
            ~gap_condition_per_ell | quarter_gap_per_ell))


def diagnostics(exact, estimated, s_exact, s_est, oracle, L,
                C1=1.0, C=1.0, s=0.5):
    """Compare an estimated spectrum against the exact discrete one.

    Computes the exact operator norm of S-tilde_exact - S-tilde_est (the
    Weyl bound), per-index eigenvalue deviations, mixed and continuous
    spectral gaps for l <= L, the gap condition
    delta_l >= 4 C1 h^{2s} / lambda_{l+1} + 4 ||S-tilde diff|| with the
    calibration constants C1 and s, Davis-Kahan ratios
    C ||S-tilde diff|| / mixed gap, and the mass-spectrum sandwich around
    the Weyl bound.  Failed gap checks are reported, never raised.
    """
    Q = exact.dof_count
    if not 1 <= L <= Q:
        raise ValueError("L must lie in [1, %d], got %r" % (Q, L))
    mass = s_exact.mass
    diff = s_exact.matrix - s_est.matrix
    weyl_bound = _operator_norm(diff)
    eigenvalue_dev = np.abs(exact.eigenvalues - estimated.eigenvalues)
    assert np.max(eigenvalue_dev) <= weyl_bound + 1e-10, \
        "eigenvalue deviation %.3e exceeds the Weyl bound %.3e" % (
            np.max(eigenvalue_dev), weyl_bound)

    discrete_gaps = _mixed_gaps(exact.eigenvalues, estimated.eigenvalues, L)
    continuous_gaps = np.array([oracle.gap(l) for l in range(1, L + 1)])
    h = mass.space.mesh.h
    lam_next = np.array([oracle.eigenvalue(l + 1) for l in range(1, L + 1)])
    gap_condition = continuous_gaps >= (
        4.0 * C1 * h ** (2.0 * s) / lam_next + 4.0 * weyl_bound)
    quarter_gap = discrete_gaps >= 0.25 * continuous_gaps
    davis_kahan = np.full(L, np.inf)
    pos = discrete_gaps > 0
    davis_kahan[pos] = C * weyl_bound / discrete_gaps[pos]

    # recover the covariance-space perturbation Sigma_diff = L^{-T} D L^{-1}
    # and check the sandwich actually contains the transformed norm
    tmp = sla.solve_triangular(mass.chol.T, diff, lower=False)
    cov_diff = sla.solve_triangular(mass.chol.T, tmp.T, lower=False).T
    cov_diff_norm = _operator_norm(cov_diff)
    lo, hi = opnorm_sandwich(mass, cov_diff_norm)
    slack = 1e-10 * max(1.0, hi)
    assert lo - slack <= weyl_bound <= hi + slack, \
        "transformed norm %.6e escapes the sandwich [%.6e, %.6e]" % (
            weyl_bound, lo, hi)

    return SpectralDiagnostics(weyl_bound, eigenvalue_dev, discrete_gaps,
                               continuous_gaps, gap_condition, quarter_gap,
                               davis_kahan, (lo, hi), cov_diff_norm)
