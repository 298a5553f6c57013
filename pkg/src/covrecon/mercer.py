"""Truncated Mercer reconstruction and the three-way error decomposition.

A rank-L spectrum on a finite element space defines the kernel
K(x, x') = sum_{l<=L} lambda_l (Phi_l . theta(x)) (Phi_l . theta(x')).
The distance of an estimated reconstruction to the analytic covariance
splits into truncation (e1), spatial discretization (e2) and sampling (e3)
parts, all measured in L2 of the product domain.

expected_error_study runs that pipeline over a (L, h, M) grid with
replications; each replication r of cell c draws its batch with the seed
derived from SeedSequence(seed, spawn_key=(c, r)), so cells and
replications are independent of execution order and worker scheduling.
"""

import numpy as np

from . import estimators, fem, fields, spectral
from .errors import NumericError

_NEAR_DEGENERATE_REL = 1e-8


class MercerKernel:
    """A truncated Mercer kernel over a finite element space."""

    def __init__(self, space, L, eigenvalues, vectors, provenance):
        Q = space.dof_count
        if not 1 <= L <= Q:
            raise ValueError("truncation rank L=%r must lie in [1, %d]" % (L, Q))
        assert eigenvalues.shape == (L,) and vectors.shape == (Q, L), \
            "spectral data shapes inconsistent with L=%d, Q=%d" % (L, Q)
        eigenvalues.setflags(write=False)
        vectors.setflags(write=False)
        self.space = space
        self.L = L
        self.eigenvalues = eigenvalues
        self.vectors = vectors
        self.provenance = provenance


def build_kernel(spectrum, L, space=None):
    """Retain the top-L eigenpairs of a discrete spectrum as a kernel."""
    space = space if space is not None else spectrum.mass.space
    L = int(L)
    if not 1 <= L <= spectrum.dof_count:
        raise ValueError("truncation rank L=%r must lie in [1, %d]"
                         % (L, spectrum.dof_count))
    return MercerKernel(space, L, spectrum.eigenvalues[:L].copy(),
                        spectrum.gen_vectors[:, :L].copy(), spectrum.source)


def kernel_matrix(kernel, X, Y):
    """Kernel values on the product of two point blocks, shape (a, b)."""
    BX = fem.basis_matrix(kernel.space, X) @ kernel.vectors
    BY = fem.basis_matrix(kernel.space, Y) @ kernel.vectors
    return (BX * kernel.eigenvalues) @ BY.T


def as_callable(kernel):
    """The kernel as a two-block callable k(X, Y) -> (a, b) array."""
    return lambda X, Y: kernel_matrix(kernel, X, Y)


def eval(kernel, x, xprime):
    """Pointwise kernel value at two points of the closed unit cube."""
    d = kernel.space.mesh.dim
    X = np.asarray(x, dtype=float).reshape(1, d)
    Y = np.asarray(xprime, dtype=float).reshape(1, d)
    return float(kernel_matrix(kernel, X, Y)[0, 0])


class ErrorReport:
    """Three-way L2(DxD) error split of a truncated reconstruction.

    e1: analytic truncation tail; e2: spatial discretization; e3: sampling.
    triangle_slack = total - (e1 + e2 + e3) must stay below quadrature
    tolerance.  near_degenerate_split flags rank windows whose per-mode
    attribution is unreliable because neighboring eigenvalues nearly
    coincide; the total remains valid.
    """

    def __init__(self, e1, e2, e3, total, q, near_degenerate_split):
        assert min(e1, e2, e3, total) >= 0.0, "error components must be >= 0"
        self.e1 = e1
        self.e2 = e2
        self.e3 = e3
        self.total = total
        self.triangle_slack = total - (e1 + e2 + e3)
        assert self.triangle_slack <= 1e-8, \
            "triangle inequality violated: total %.6e > e1+e2+e3 %.6e" % (
                total, e1 + e2 + e3)
        self.q = q
        self.near_degenerate_split = near_degenerate_split


def _oracle_truncated(oracle, L):
    """The analytic rank-L kernel sum_{l<=L} lambda_l phi_l(x) phi_l(x')."""
    lams = np.array([oracle.eigenvalue(l) for l in range(1, L + 1)])

    def k(X, Y):
        PX = np.column_stack([oracle.eigenfunction(l, X) for l in range(1, L + 1)])
        PY = np.column_stack([oracle.eigenfunction(l, Y) for l in range(1, L + 1)])
        return (PX * lams) @ PY.T

    return k


def _diff(ka, kb):
    return lambda X, Y: ka(X, Y) - kb(X, Y)


def error_decomposition(field, oracle, exact_spec, est_spec, L, q=2):
    """Split the reconstruction error of an estimated rank-L kernel.

    The estimated spectrum is sign-aligned to the exact discrete one before
    differencing, since eigenvector sign flips would corrupt the e2/e3
    attribution while leaving the total unchanged.  e1 comes from the
    analytic tail of squared eigenvalues; e2, e3 and the total are
    quadrature norms of difference kernels.
    """
    if exact_spec.dof_count != est_spec.dof_count:
        raise ValueError("spectra live on different spaces: %d vs %d dofs"
                         % (exact_spec.dof_count, est_spec.dof_count))
    space = exact_spec.mass.space
    L = int(L)
    if not 1 <= L <= exact_spec.dof_count:
        raise ValueError("truncation rank L=%r must lie in [1, %d]"
                         % (L, exact_spec.dof_count))
    est_spec = spectral.align_signs(exact_spec, est_spec)

    k_true = field.covariance
    k_trunc = _oracle_truncated(oracle, L)
    k_exact_h = as_callable(build_kernel(exact_spec, L, space))
    k_est = as_callable(build_kernel(est_spec, L, space))

    e1 = float(np.sqrt(oracle.tail_sq(L)))
    e2 = fem.kernel_l2_norm(space, _diff(k_trunc, k_exact_h), q)
    e3 = fem.kernel_l2_norm(space, _diff(k_exact_h, k_est), q)
    total = fem.kernel_l2_norm(space, _diff(k_true, k_est), q)

    lam = exact_spec.eigenvalues
    upper = min(L + 1, exact_spec.dof_count)
    min_gap = float(np.min(lam[:upper - 1] - lam[1:upper])) if upper > 1 else np.inf
    near_degenerate = bool(min_gap < _NEAR_DEGENERATE_REL * lam[0])
    return ErrorReport(e1, e2, e3, total, q, near_degenerate)


# ---------------------------------------------------------------------------
# grid study


class CellResult:
    """Aggregated replication results of one (L, h, M) study cell."""

    def __init__(self, index, L, n, M, ok, error=None, mean_total=np.nan,
                 mean_e1=np.nan, mean_e2=np.nan, mean_e3=np.nan,
                 stderr=np.nan, n_rep=0, gap_fail_fraction=np.nan,
                 p0=np.nan, tau=0, lambda1_dev=np.nan):
        self.index = index
        self.L = L
        self.n = n
        self.M = M
        self.ok = ok
        self.error = error
        self.mean_total = mean_total
        self.mean_e1 = mean_e1
        self.mean_e2 = mean_e2
        self.mean_e3 = mean_e3
        self.stderr = stderr
        self.n_rep = n_rep
        self.gap_fail_fraction = gap_fail_fraction
        self.p0 = p0
        self.tau = tau
        self.lambda1_dev = lambda1_dev

    @property
    def h(self):
        return 1.0 / self.n

    def to_dict(self):
        return dict(index=self.index, L=self.L, n=self.n, M=self.M,
                    ok=self.ok, error=self.error, mean_total=self.mean_total,
                    mean_e1=self.mean_e1, mean_e2=self.mean_e2,
                    mean_e3=self.mean_e3, stderr=self.stderr,
                    n_rep=self.n_rep,
                    gap_fail_fraction=self.gap_fail_fraction, p0=self.p0,
                    tau=self.tau, lambda1_dev=self.lambda1_dev)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def rep_seed(base_seed, cell_index, rep):
    """Derived integer seed of replication rep in cell cell_index."""
    ss = np.random.SeedSequence(int(base_seed),
                                spawn_key=(int(cell_index), int(rep)))
    return int(ss.generate_state(1, np.uint64)[0])


def study_cells(config):
    """The (L, n, M) grid of a study config in deterministic order."""
    cells = []
    idx = 0
    for L in config.Ls:
        for n in config.ns:
            for M in config.Ms:
                cells.append((idx, L, n, M))
                idx += 1
    return cells


def run_cell(config, index, L, n, M):
    """Run all replications of one study cell and aggregate them."""
    from . import planner
    try:
        field = fields.brownian_field(config.d, config.delta)
        oracle = fields.brownian_oracle(config.d)
        space = fem.build_space(config.d, n)
        if L > space.dof_count:
            raise ValueError("truncation rank L=%d exceeds dof count Q_h=%d"
                             % (L, space.dof_count))
        mass = fem.assemble_mass(space)
        sigma_exact = fields.exact_discrete_covariance(field, space)
        s_exact = spectral.transform(sigma_exact, mass, spectral.SOURCE_EXACT)
        exact_spec = spectral.eigensolve(s_exact)
        cal = config.calibration

        totals, e3s = [], []
        e1 = e2 = np.nan
        gap_fail = 0
        tau = 0
        for rep in range(config.n_rep):
            seed = rep_seed(config.seed, index, rep)
            batch = fields.draw_batch(field, space, M, mode=config.mode,
                                      seed=seed, kl_trunc=config.kl_trunc,
                                      q=config.q)
            alpha = config.alpha if config.estimator == "Tapered" else None
            cov = estimators.estimate_covariance(batch, alpha=alpha)
            tau = cov.tau
            s_est = spectral.transform(cov, mass, spectral.SOURCE_ESTIMATED)
            est_spec = spectral.eigensolve(s_est)
            diag = spectral.diagnostics(exact_spec, est_spec, s_exact, s_est,
                                        oracle, L, C1=cal["C1"], C=cal["C"],
                                        s=config.s)
            if not diag.gap_condition_ok:
                gap_fail += 1
            report = error_decomposition(field, oracle, exact_spec, est_spec,
                                         L, q=config.q)
            totals.append(report.total)
            e3s.append(report.e3)
            e1, e2 = report.e1, report.e2

        profile = planner.brownian_profile(
            d=config.d, s=config.s, alpha=config.alpha, calibration=cal)
        p0 = planner.p0_bound(profile, space.dof_count, max(tau, 2), M, L)
        lam1_dev = abs(exact_spec.eigenvalues[0] - oracle.eigenvalue(1))
        stderr = float(np.std(totals, ddof=1) / np.sqrt(len(totals))) \
            if len(totals) > 1 else 0.0
        return CellResult(index, L, n, M, ok=True,
                          mean_total=float(np.mean(totals)), mean_e1=float(e1),
                          mean_e2=float(e2), mean_e3=float(np.mean(e3s)),
                          stderr=stderr, n_rep=config.n_rep,
                          gap_fail_fraction=gap_fail / config.n_rep, p0=p0,
                          tau=tau, lambda1_dev=float(lam1_dev))
    except (ValueError, NumericError, AssertionError) as exc:
        return CellResult(index, L, n, M, ok=False,
                          error="%s: %s" % (type(exc).__name__, exc))


def _run_cell_args(args):
    return run_cell(*args)


def expected_error_study(config, workers=1, cell_loader=None, cell_saver=None):
    """Run the full study grid, isolating failures to their cells.

    cell_loader(index) may return a previously completed CellResult to skip
    recomputation (resume); cell_saver(result) persists each finished cell.
    Replication seeds depend only on (config.seed, cell index, rep), so the
    worker count never changes the numbers.
    """
    if config.n_rep < 2:
        raise ValueError("study needs n_rep >= 2, got %d" % (config.n_rep,))
    cells = study_cells(config)
    results = {}
    todo = []
    for cell in cells:
        prior = cell_loader(cell[0]) if cell_loader is not None else None
        if prior is not None and prior.ok:
            results[cell[0]] = prior
        else:
            todo.append(cell)
    if workers > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fresh = list(pool.map(_run_cell_args,
                                  [(config,) + c for c in todo]))
    else:
        fresh = [run_cell(config, *c) for c in todo]
    for res in fresh:
        results[res.index] = res
        if cell_saver is not None:
            cell_saver(res)
    return [results[i] for i in sorted(results)]


def _loglog_slope(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0)
    if np.count_nonzero(keep) < 2:
        return float("nan"), int(np.count_nonzero(keep))
    slope = np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)[0]
    return float(slope), int(np.count_nonzero(keep))


def study_rates(results):
    """Regression slopes summarizing a study: e1 vs L, lambda_1 error vs h, e3 vs M.

    Each slope uses the grid axis with the other two parameters held at the
    first value encountered; rows are (quantity, slope, n_points).
    """
    ok = [r for r in results if r.ok]
    rows = []

    by_l = {}
    for r in ok:
        by_l.setdefault((r.n, r.M), {})[r.L] = r.mean_e1
    groups = sorted(by_l, key=lambda k: -len(by_l[k]))
    pts = by_l[groups[0]] if groups else {}
    slope, npts = _loglog_slope(sorted(pts), [pts[L] for L in sorted(pts)])
    rows.append(("e1_vs_L", slope, npts))

    by_h = {}
    for r in ok:
        by_h.setdefault((r.L, r.M), {})[r.h] = r.lambda1_dev
    groups = sorted(by_h, key=lambda k: -len(by_h[k]))
    pts = by_h[groups[0]] if groups else {}
    slope, npts = _loglog_slope(sorted(pts), [pts[h] for h in sorted(pts)])
    rows.append(("lambda1_dev_vs_h", slope, npts))

    by_m = {}
    for r in ok:
        by_m.setdefault((r.L, r.n), {})[r.M] = r.mean_e3
    groups = sorted(by_m, key=lambda k: -len(by_m[k]))
    pts = by_m[groups[0]] if groups else {}
    slope, npts = _loglog_slope(sorted(pts), [pts[M] for M in sorted(pts)])
    rows.append(("e3_vs_M", slope, npts))
    return rows
