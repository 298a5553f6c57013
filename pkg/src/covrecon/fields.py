"""Gaussian random fields with known covariance and their KL oracles.

Centered Brownian motion on (0,1) and the Brownian sheet on (0,1)^2, their
exact Karhunen-Loeve eigenpairs, and batch sampling of finite element
coefficient vectors.

Sampling reproducibility contract: sample m of a batch with seed s is drawn
from the substream ``Generator(Philox(SeedSequence(s)).jumped(m))``.  The
(seed, m) keying makes batches bitwise independent of chunking or scheduling.
"""

import numpy as np
import scipy.linalg as sla

from . import fem
from .errors import NumericError

MODE_NODAL = "NodalInterpolation"
MODE_PROJECTION = "L2ProjectionOfTruncatedKL"

_SAMPLE_CHUNK = 4096


class AnalyticField:
    """A centered Gaussian field with analytically known covariance.

    Attributes
    ----------
    kind : "BrownianMotion1D" or "BrownianSheet2D"
    dim : spatial dimension
    s : reported smoothness 0.5 - delta
    covariance : callable with the two-block convention R(X, Y) -> (a, b)
    """

    def __init__(self, kind, dim, s, covariance):
        self.kind = kind
        self.dim = dim
        self.s = s
        self.covariance = covariance


def _min_kernel_1d(X, Y):
    return np.minimum.outer(np.asarray(X)[:, 0], np.asarray(Y)[:, 0])


def _min_kernel_2d(X, Y):
    X = np.asarray(X)
    Y = np.asarray(Y)
    return (np.minimum.outer(X[:, 0], Y[:, 0])
            * np.minimum.outer(X[:, 1], Y[:, 1]))


def brownian_field(dim, delta=1e-3):
    """Brownian motion (dim=1) or Brownian sheet (dim=2) on the unit cube.

    delta is the smoothness-report offset: the field is reported with
    s = 0.5 - delta since Brownian paths sit just below H^{1/2}.
    """
    if dim == 1:
        return AnalyticField("BrownianMotion1D", 1, 0.5 - delta, _min_kernel_1d)
    if dim == 2:
        return AnalyticField("BrownianSheet2D", 2, 0.5 - delta, _min_kernel_2d)
    raise ValueError("dim must be 1 or 2, got %r" % (dim,))


def _lam1(ell):
    """1D eigenvalue pi^-2 (ell - 1/2)^-2."""
    return (np.pi ** -2) * (np.asarray(ell, dtype=float) - 0.5) ** -2


def _phi1(ell, x):
    """1D eigenfunction sqrt(2) sin((ell - 1/2) pi x)."""
    return np.sqrt(2.0) * np.sin((ell - 0.5) * np.pi * np.asarray(x, dtype=float))


class KlOracle:
    """Exact KL eigenpairs of the Brownian min-kernel covariance.

    eigenvalue(l) and eigenfunction(l, points) enumerate the spectrum in
    descending order; in 2D tensor pairs are sorted with multiplicity and a
    deterministic tie-break so the eigenfunction family stays orthonormal.
    gap(l) is the distance from eigenvalue l to the nearest *distinct*
    eigenvalue, which in 1D (all values simple) coincides with
    min{lambda_{l-1} - lambda_l, lambda_l - lambda_{l+1}}, lambda_0 = inf.
    """

    def __init__(self, dim):
        if dim not in (1, 2):
            raise ValueError("dim must be 1 or 2, got %r" % (dim,))
        self.dim = dim
        self._pairs = None
        if dim == 2:
            self._extend_pairs(64)

    # -- 2D enumeration -------------------------------------------------
    def _extend_pairs(self, k):
        """Sort the k x k tensor-index grid by descending eigenvalue."""
        l1, l2 = np.meshgrid(np.arange(1, k + 1), np.arange(1, k + 1), indexing="ij")
        prod = (2 * l1 - 1) * (2 * l2 - 1)
        order = np.lexsort((l2.ravel(), l1.ravel(), prod.ravel()))
        self._pairs = np.column_stack(
            [l1.ravel()[order], l2.ravel()[order], prod.ravel()[order]])
        self._grid_k = k

    def _pair(self, ell):
        """Tensor index pair of rank ell (1-based) in the 2D enumeration."""
        while (ell > len(self._pairs)
               or self._pairs[ell - 1, 2] >= 2 * self._grid_k + 1):
            # ranks are only trustworthy while their product stays below the
            # smallest product reachable outside the enumerated grid
            self._extend_pairs(2 * self._grid_k)
        return self._pairs[ell - 1]

    # -- public oracle surface ------------------------------------------
    def eigenvalue(self, ell):
        if ell < 1:
            raise ValueError("eigenvalue index must be >= 1, got %r" % (ell,))
        if self.dim == 1:
            return float(_lam1(ell))
        l1, l2, _ = self._pair(int(ell))
        return float(_lam1(l1) * _lam1(l2))

    def eigenfunction(self, ell, points):
        """Values of eigenfunction ell at points of shape (npts, dim)."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ValueError("points must have shape (npts, %d)" % (self.dim,))
        if self.dim == 1:
            return _phi1(ell, points[:, 0])
        l1, l2, _ = self._pair(int(ell))
        return _phi1(l1, points[:, 0]) * _phi1(l2, points[:, 1])

    def gap(self, ell):
        """Distance from eigenvalue ell to the nearest distinct eigenvalue."""
        if ell < 1:
            raise ValueError("gap index must be >= 1, got %r" % (ell,))
        if self.dim == 1:
            lam = _lam1(ell)
            right = lam - _lam1(ell + 1)
            left = np.inf if ell == 1 else _lam1(ell - 1) - lam
            return float(min(left, right))
        ell = int(ell)
        m = int(self._pair(ell)[2])
        # distinct 2D values are 16 pi^-4 m^-2 over odd m (m = m*1 is always
        # attained), so the distinct neighbors sit at m -/+ 2
        left = np.inf if m == 1 else self._value_of_product(m - 2) \
            - self._value_of_product(m)
        right = self._value_of_product(m) - self._value_of_product(m + 2)
        return float(min(left, right))

    def _value_of_product(self, m):
        return 16.0 * np.pi ** -4 / float(m) ** 2

    # -- tail sums for the truncation error -----------------------------
    def sum_sq_total(self):
        """Sum of all squared eigenvalues: the squared L2(DxD) kernel norm."""
        return 6.0 ** -self.dim

    def tail_sq(self, L, cap=10 ** 6):
        """Sum of squared eigenvalues beyond index L.

        1D: the tail is summed ascending over indices L+1..cap and closed
        with the analytic integral remainder of the (2l-1)^-4 series.
        2D: partial sums telescope against the exact total (1/36).
        """
        if L < 0:
            raise ValueError("L must be >= 0, got %r" % (L,))
        if self.dim == 1:
            if cap <= L:
                raise ValueError("tail cap %d must exceed L=%d" % (cap, L))
            ells = np.arange(cap, L, -1, dtype=float)  # ascending magnitudes
            partial = float(np.sum(_lam1(ells) ** 2))
            remainder = 16.0 * np.pi ** -4 / (6.0 * (2.0 * cap) ** 3)
            return partial + remainder
        head = sum(self.eigenvalue(l) ** 2 for l in range(1, L + 1))
        return max(self.sum_sq_total() - head, 0.0)


def brownian_oracle(d):
    """Exact KL oracle of Brownian motion (d=1) or the Brownian sheet (d=2)."""
    return KlOracle(d)


class SampleBatch:
    """M discretized field realizations as rows of coefficient vectors."""

    def __init__(self, space, coeffs, mode, kl_trunc, seed, field_kind):
        assert coeffs.shape[0] >= 1, "batch must contain at least one sample"
        assert coeffs.shape[1] == space.dof_count, \
            "coefficient width %d does not match dof count %d" % (
                coeffs.shape[1], space.dof_count)
        coeffs.setflags(write=False)
        self.space = space
        self.coeffs = coeffs
        self.mode = mode
        self.kl_trunc = kl_trunc
        self.seed = int(seed)
        self.field_kind = field_kind

    @property
    def sample_count(self):
        return self.coeffs.shape[0]


def _chol_with_jitter(C, jitter):
    """Cholesky factor of C, retrying once with a scaled diagonal shift."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    bump = jitter * np.max(np.diag(C))
    try:
        return np.linalg.cholesky(C + bump * np.eye(len(C)))
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "nodal covariance Cholesky failed even with jitter %.1e "
            "(mesh too fine for this jitter; raise jitter or reduce n): %s"
            % (jitter, exc))


def _stream_key(seed):
    """128-bit Philox key of the batch root Philox(SeedSequence(seed))."""
    key = np.random.Philox(np.random.SeedSequence(int(seed))).state["state"]["key"]
    return int(key[0]) | (int(key[1]) << 64)


def sample_generators(seed, start, count):
    """Per-sample generators for samples start..start+count-1 of a batch.

    Stream m is Generator(Philox(SeedSequence(seed)).jumped(m)); since
    jumped(m) only advances the 256-bit Philox counter by m * 2^128, the
    streams are built directly from (key, counter), which is equivalent
    and avoids the per-sample jump cost.
    """
    key = _stream_key(seed)
    return [np.random.Generator(np.random.Philox(counter=m << 128, key=key))
            for m in range(start, start + count)]


def draw_batch(field, space, M, mode=MODE_NODAL, seed=0, kl_trunc=None,
               jitter=1e-10, q=4):
    """Draw M discretized realizations of the field on the given space.

    mode "NodalInterpolation": exact joint-Gaussian nodal values (cumulative
    increments in 1D, per-axis Cholesky of the nodal min-kernel in 2D).
    mode "L2ProjectionOfTruncatedKL": truncated KL series with kl_trunc
    standard normal coefficients, then L2-projected onto the space.
    """
    M = int(M)
    if M < 1:
        raise ValueError("sample count M must be >= 1, got %r" % (M,))
    if field.dim != space.mesh.dim:
        raise ValueError("field dimension %d does not match mesh dimension %d"
                         % (field.dim, space.mesh.dim))
    if mode == MODE_NODAL:
        coeffs = _draw_nodal(field, space, M, seed, jitter)
        kl_trunc = None
    elif mode == MODE_PROJECTION:
        if kl_trunc is None or int(kl_trunc) < 1:
            raise ValueError("projection mode needs kl_trunc >= 1, got %r"
                             % (kl_trunc,))
        kl_trunc = int(kl_trunc)
        coeffs = _draw_projected(field, space, M, seed, kl_trunc, q)
    else:
        raise ValueError("unknown sampling mode %r" % (mode,))
    return SampleBatch(space, coeffs, mode, kl_trunc, seed, field.kind)


def _draw_nodal(field, space, M, seed, jitter):
    mesh = space.mesh
    n = mesh.elements_per_axis
    h = mesh.h
    Q = space.dof_count
    coeffs = np.empty((M, Q))
    if mesh.dim == 2:
        pos = mesh.axis_nodes[1:]
        Lx = _chol_with_jitter(np.minimum.outer(pos, pos), jitter)
    for start in range(0, M, _SAMPLE_CHUNK):
        gens = sample_generators(seed, start, min(_SAMPLE_CHUNK, M - start))
        if mesh.dim == 1:
            Z = np.stack([g.standard_normal(n) for g in gens])
            coeffs[start:start + len(gens), 0] = 0.0
            coeffs[start:start + len(gens), 1:] = np.sqrt(h) * np.cumsum(Z, axis=1)
        else:
            Z = np.stack([g.standard_normal((n, n)) for g in gens])
            inner = np.einsum("ij,mjk,lk->mil", Lx, Z, Lx)
            full = np.zeros((len(gens), n + 1, n + 1))
            full[:, 1:, 1:] = inner
            coeffs[start:start + len(gens)] = full.reshape(len(gens), Q)
    return coeffs


def _draw_projected(field, space, M, seed, kl_trunc, q):
    oracle = brownian_oracle(field.dim)
    pts, wts = fem.quadrature_points(space, q)
    Phi = np.column_stack(
        [oracle.eigenfunction(l, pts) for l in range(1, kl_trunc + 1)])
    scale = np.sqrt([oracle.eigenvalue(l) for l in range(1, kl_trunc + 1)])
    mass = fem.assemble_mass(space)
    T = fem.basis_matrix(space, pts)
    TW = wts[:, None] * T
    coeffs = np.empty((M, space.dof_count))
    for start in range(0, M, _SAMPLE_CHUNK):
        gens = sample_generators(seed, start, min(_SAMPLE_CHUNK, M - start))
        Psi = np.stack([g.standard_normal(kl_trunc) for g in gens])
        field_vals = (Psi * scale) @ Phi.T
        B = field_vals @ TW
        coeffs[start:start + len(gens)] = sla.cho_solve((mass.chol, True), B.T).T
    return coeffs


def exact_discrete_covariance(field, space):
    """Covariance of the nodal coefficient vector: R evaluated at node pairs."""
    nodes = space.mesh.nodes
    cov = np.asarray(field.covariance(nodes, nodes), dtype=float)
    assert np.array_equal(cov, cov.T), "analytic covariance evaluation not symmetric"
    return cov


class MomentDiagnostics:
    """Sup-norm second-moment estimate and sample-mean summary of a batch."""

    def __init__(self, c_inf_hat, mean_max_abs, sample_count):
        self.c_inf_hat = c_inf_hat
        self.mean_max_abs = mean_max_abs
        # centering bound |E field| <= c_inf: tested on estimates with
        # Monte Carlo slack 3 c_inf / sqrt(M)
        self.centering_ok = mean_max_abs <= 3.0 * c_inf_hat / np.sqrt(sample_count) + 1e-300


def moment_diagnostics(batch):
    """Estimate c_inf = sqrt(E max_j K_j^2) and the sample-mean sup-norm."""
    if batch.sample_count < 2:
        raise ValueError("moment diagnostics need at least 2 samples, got %d"
                         % (batch.sample_count,))
    per_sample_max = np.max(np.abs(batch.coeffs), axis=1)
    c_inf_hat = float(np.sqrt(np.mean(per_sample_max ** 2)))
    mean_max_abs = float(np.max(np.abs(np.mean(batch.coeffs, axis=0))))
    return MomentDiagnostics(c_inf_hat, mean_max_abs, batch.sample_count)


def psd_check(field, points, jitter=1e-10):
    """Whether the covariance on a finite point set admits a (jittered) Cholesky."""
    C = np.asarray(field.covariance(points, points), dtype=float)
    C = 0.5 * (C + C.T)
    try:
        _chol_with_jitter(C, jitter)
        return True
    except NumericError:
        return False
