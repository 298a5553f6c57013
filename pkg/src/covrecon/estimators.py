"""Covariance estimation from sample batches: MLE, tapering, decay checks.

The tapering estimator multiplies the MLE sample covariance entrywise by
trapezoidal weights that vanish beyond a bandwidth tau chosen from the
sample count and the off-diagonal decay exponent alpha.  The rate function
rho_tilde gives the theoretical squared-error level of that choice.
"""

import math

import numpy as np


class TaperedCovariance:
    """A symmetric covariance estimate with its estimator metadata.

    estimator_kind is "MLE" (tau = 0, alpha = None) or "Tapered" (even
    bandwidth tau >= 2); M is the sample count the estimate came from.
    """

    def __init__(self, matrix, tau, alpha, estimator_kind, M):
        matrix = np.asarray(matrix, dtype=float)
        assert matrix.ndim == 2 and matrix.shape[0] == matrix.shape[1], \
            "covariance matrix must be square, got shape %r" % (matrix.shape,)
        assert np.array_equal(matrix, matrix.T), \
            "covariance matrix must be exactly symmetric"
        self.matrix = matrix
        self.tau = int(tau)
        self.alpha = alpha
        self.estimator_kind = estimator_kind
        self.M = int(M)

    @property
    def dof_count(self):
        return self.matrix.shape[0]


def sample_mean(batch):
    """Arithmetic mean of the sample rows."""
    if batch.sample_count < 1:
        raise ValueError("sample mean needs at least 1 sample")
    return np.mean(batch.coeffs, axis=0)


def mle_covariance(batch):
    """Centered second-moment matrix with divisor M (the Gaussian MLE)."""
    M = batch.sample_count
    if M < 2:
        raise ValueError("MLE covariance needs at least 2 samples, got %d" % (M,))
    Xc = batch.coeffs - sample_mean(batch)
    raw = (Xc.T @ Xc) / M
    sym = 0.5 * (raw + raw.T)
    return TaperedCovariance(sym, tau=0, alpha=None, estimator_kind="MLE", M=M)


def tapering_weights(tau, j, jprime):
    """Trapezoidal taper weight for index offset |j - jprime| at width tau.

    1 on offsets up to tau/2, linear decay 2(1 - offset/tau) up to tau,
    0 beyond.  tau must be a positive even integer.
    """
    tau = int(tau)
    if tau < 2 or tau % 2 != 0:
        raise ValueError("tau must be a positive even integer, got %r" % (tau,))
    dist = np.abs(np.asarray(j) - np.asarray(jprime)).astype(float)
    w = np.clip(2.0 * (1.0 - dist / tau), 0.0, 1.0)
    return w if w.ndim else float(w)


def _weight_matrix(Q, tau):
    idx = np.arange(Q)
    return tapering_weights(tau, idx[:, None], idx[None, :])


def taper(cov, alpha):
    """Taper an MLE covariance at the rate-optimal bandwidth for alpha.

    tau is the smallest even integer >= M^{1/(2 alpha + 1)}, clamped to
    [2, Q].  If Q < M^{1/(2 alpha + 1)} the matrix is so small that the
    plain MLE already attains the rate and cov is returned unchanged.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive, got %r" % (alpha,))
    Q = cov.dof_count
    raw = cov.M ** (1.0 / (2.0 * alpha + 1.0))
    if Q < raw:
        return cov
    tau = max(2 * math.ceil(raw / 2.0), 2)
    if tau > Q:
        tau = Q if Q % 2 == 0 else Q - 1
    tapered = cov.matrix * _weight_matrix(Q, tau)
    return TaperedCovariance(tapered, tau=tau, alpha=alpha,
                             estimator_kind="Tapered", M=cov.M)


def estimate_covariance(batch, alpha=None):
    """MLE covariance of a batch, tapered at the optimal bandwidth if alpha given."""
    cov = mle_covariance(batch)
    if alpha is None:
        return cov
    return taper(cov, alpha)


def rho_tilde(h, M, alpha, d, s):
    """Theoretical squared-error rate of the tapered estimator.

    Returns M^{-2a/(2a+1)} + d log(1/h)/M when the dof count
    Q_h = (1/h + 1)^d reaches the optimal bandwidth M^{1/(2a+1)}, and the
    untapered level h^{-d}/M otherwise.  The smoothness s is part of the
    call signature for symmetry with the planner but does not enter the rate.
    """
    if not (h > 0 and M > 0 and alpha > 0 and d > 0 and s > 0):
        raise ValueError("rho_tilde arguments must all be positive")
    Q_h = (1.0 / h + 1.0) ** d
    if Q_h >= M ** (1.0 / (2.0 * alpha + 1.0)):
        return M ** (-2.0 * alpha / (2.0 * alpha + 1.0)) + d * math.log(1.0 / h) / M
    return h ** (-d) / M


class DecayClassCheck:
    """Measured off-diagonal decay of a covariance matrix against a class bound."""

    def __init__(self, alpha, C1_est, lambda_max, C1, C2):
        self.alpha = alpha
        self.C1_est = C1_est
        self.lambda_max = lambda_max
        self.C1 = C1
        self.C2 = C2
        self.passes = bool(C1_est <= C1 and lambda_max <= C2)


def decay_class_check(matrix, alpha, C1, C2):
    """Fit the smallest decay constant of a matrix and test class membership.

    For every cutoff c the worst-row off-diagonal tail sum
    max_j sum_{|j'-j|>c} |A_{j,j'}| is computed; C1_est is the largest
    tail(c) * c^alpha, so membership in the decay class with constants
    (C1, C2) holds iff C1_est <= C1 and the top eigenvalue is <= C2.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("decay check needs a square matrix, got %r" % (A.shape,))
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(np.max(np.abs(A)), 1.0)):
        raise ValueError("decay check needs a symmetric matrix")
    Q = A.shape[0]
    absA = np.abs(A)
    # per row: bucket |entries| by index offset, then suffix-sum over offsets
    by_dist = np.zeros((Q, Q))
    idx = np.arange(Q)
    for j in range(Q):
        by_dist[j] = np.bincount(np.abs(idx - j), weights=absA[j], minlength=Q)
    suffix = np.cumsum(by_dist[:, ::-1], axis=1)[:, ::-1]
    # tail(c) needs offsets strictly beyond c: shift the suffix by one
    tail = np.zeros(Q)
    tail[:-1] = np.max(suffix[:, 1:], axis=0)
    cs = np.arange(1, Q, dtype=float)
    C1_est = float(np.max(tail[1:Q] * cs ** alpha)) if Q > 1 else 0.0
    lambda_max = float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])
    return DecayClassCheck(alpha, C1_est, lambda_max, C1, C2)


class SubgaussianDiagnostic:
    """Nodal proxy for the inverse concentration constant of a batch."""

    def __init__(self, c_inf_hat, rho_inv_nodal):
        self.c_inf_hat = c_inf_hat
        self.rho_inv_nodal = rho_inv_nodal

    @property
    def rho1(self):
        return 1.0 / self.rho_inv_nodal if self.rho_inv_nodal > 0 else math.inf


def subgaussian_diagnostic(batch):
    """Estimate rho_inv_nodal = 4 c_inf^2 from the batch sup-norm moments."""
    from .fields import moment_diagnostics
    mom = moment_diagnostics(batch)
    return SubgaussianDiagnostic(mom.c_inf_hat, 4.0 * mom.c_inf_hat ** 2)


def operator_norm(A):
    """Spectral norm of a symmetric matrix via its extreme eigenvalues."""
    vals = np.linalg.eigvalsh(0.5 * (A + A.T))
    return float(max(abs(vals[0]), abs(vals[-1])))


def bandwidth(A, tol=0.0):
    """Largest index offset with an entry of magnitude > tol (0 for diagonal)."""
    A = np.asarray(A)
    nz = np.abs(A) > tol
    offs = np.abs(np.arange(A.shape[0])[:, None] - np.arange(A.shape[1])[None, :])
    return int(np.max(offs[nz])) if np.any(nz) else 0
