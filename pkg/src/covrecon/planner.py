"""A-priori parameter planning for covariance reconstruction.

Given a spectral profile (eigenvalue oracle, smoothness s, dimension d,
decay exponent alpha, growth exponent gamma, calibration constants) and a
target accuracy epsilon, the planner couples the truncation rank L, the
sample count M and the mesh width h so the three error contributions all
sit below epsilon.  Three regimes are distinguished by which term of the
estimator rate dominates:

  1 SmallQh           - dof count below the tapering bandwidth; plain MLE.
  2 LargeQhLogDominated  - tapering active, log(1/h)/M term balanced.
  3 LargeQhRateDominated - tapering active, M^{-2a/(2a+1)} term dominates.

Sample-count thresholds (M_bar, M_tilde, M_hat, M_prime) are defined as
the smallest integer M satisfying a closed inequality; they are found by
probing the unimodal log-space predicate at its peak, exponential
stepping, then bisection.  For M_tilde the product-logarithm closed form
is evaluated with an independent bisection as a cross-check.
"""

import math

import numpy as np

from .errors import DegenerateSpectrumError, InfeasiblePlanError
from .fields import brownian_oracle

DEFAULT_CALIBRATION = dict(C1=1.0, C2=1.0, C=1.0, h0=0.5, rho1=1.0,
                           lambda_max_mass=1.0, beta=0.1)

CASE_SMALL = "SmallQh"
CASE_LOG = "LargeQhLogDominated"
CASE_RATE = "LargeQhRateDominated"

_SEARCH_LIMIT = 10 ** 18


class SpectralProfile:
    """Everything the planner needs to know about the target field."""

    def __init__(self, oracle, s, d, alpha, gamma, calibration=None):
        if gamma < 0.5:
            raise ValueError("gamma must be >= 1/2, got %r" % (gamma,))
        cal = dict(DEFAULT_CALIBRATION)
        if calibration:
            cal.update(calibration)
        for key, val in cal.items():
            if not val > 0:
                raise ValueError("calibration constant %s must be > 0, got %r"
                                 % (key, val))
        self.oracle = oracle
        self.s = float(s)
        self.d = int(d)
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        self.calibration = cal


def brownian_profile(d=1, s=0.5, alpha=1.0, gamma=1.5, calibration=None):
    """Profile of the Brownian field: eigenvalue ratios grow like L^{3/2}."""
    return SpectralProfile(brownian_oracle(d), s, d, alpha, gamma, calibration)


def _gaps(profile, L):
    gaps = np.array([profile.oracle.gap(l) for l in range(1, L + 1)])
    if np.any(gaps <= 0):
        raise DegenerateSpectrumError(
            "zero spectral gap at index %d; eigenvalue ratios are undefined"
            % (int(np.argmin(gaps)) + 1,))
    return gaps


def g_of_l(profile, L):
    """Root sum of squared eigenvalue-to-gap ratios over the first L modes."""
    if L < 1:
        raise ValueError("L must be >= 1, got %r" % (L,))
    lams = np.array([profile.oracle.eigenvalue(l) for l in range(1, L + 1)])
    return float(np.sqrt(np.sum((lams / _gaps(profile, L)) ** 2)))


def h_of_l(profile, L):
    """Squared worst gap over the first L modes, scaled by 48^-2."""
    if L < 1:
        raise ValueError("L must be >= 1, got %r" % (L,))
    return float(np.min(_gaps(profile, L)) ** 2 / 2304.0)


def p0_bound(profile, Q_h, tau, M, L):
    """Lower bound on the probability that all L spectral gaps survive.

    1 - 2 Q_h 5^tau exp(-M rho1 (min gap / (48 lambda_max(G)))^2), clamped
    to [0, 1] and evaluated in log space so large tau cannot overflow.
    """
    if Q_h < 1 or L < 1 or M < 0:
        raise ValueError("p0_bound needs Q_h >= 1, L >= 1, M >= 0")
    tau = int(tau)
    if tau < 2 or tau % 2 != 0:
        raise ValueError("tau must be a positive even integer, got %r" % (tau,))
    cal = profile.calibration
    min_gap = float(np.min(_gaps(profile, L)))
    arg = (min_gap / (48.0 * cal["lambda_max_mass"])) ** 2
    log_fail = math.log(2.0 * Q_h) + tau * math.log(5.0) - M * cal["rho1"] * arg
    if log_fail >= 0.0:
        return 0.0
    return float(-math.expm1(log_fail))


class GapBudget:
    """Spectral-gap budget of a truncation level at a given mesh width."""

    def __init__(self, G_of_L, H_of_L, p0, margins, c2_condition_ok):
        delta_min = math.sqrt(2304.0 * H_of_L)
        assert H_of_L <= (delta_min / 48.0) ** 2 + 1e-12, \
            "H(L) exceeds its defining gap square"
        self.G_of_L = G_of_L
        self.H_of_L = H_of_L
        self.p0 = p0
        self.gap_condition_margin = margins
        self.gap_condition_ok = bool(np.all(margins >= 0))
        self.c2_condition_ok = c2_condition_ok


def check_gap_condition(profile, L, h, stiffness_diff_norm,
                        Q_h=None, tau=None, M=None):
    """Margins of the spectral-gap condition at mesh width h.

    Per mode: gap_l - (4 C1 h^{2s} / lambda_{l+1} + 4 ||S-tilde diff||).
    Also flags the calibration-dependent smallness condition
    C2 h^s / lambda_L <= 1.  p0 is filled in when (Q_h, tau, M) are given.
    """
    cal = profile.calibration
    if not 0.0 < h <= cal["h0"]:
        raise ValueError("h=%r must lie in (0, h0=%r]" % (h, cal["h0"]))
    gaps = _gaps(profile, L)
    lam_next = np.array([profile.oracle.eigenvalue(l + 1)
                         for l in range(1, L + 1)])
    rhs = 4.0 * cal["C1"] * h ** (2.0 * profile.s) / lam_next \
        + 4.0 * stiffness_diff_norm
    margins = gaps - rhs
    lam_L = profile.oracle.eigenvalue(L)
    c2_ok = bool(cal["C2"] * h ** profile.s / lam_L <= 1.0)
    p0 = p0_bound(profile, Q_h, tau, M, L) \
        if None not in (Q_h, tau, M) else float("nan")
    return GapBudget(g_of_l(profile, L), h_of_l(profile, L), p0, margins, c2_ok)


# ---------------------------------------------------------------------------
# integer thresholds


def _iceil(x):
    """Ceiling with a relative tolerance so near-integers do not round up."""
    if not math.isfinite(x):
        raise InfeasiblePlanError("planned quantity overflowed to %r" % (x,))
    return max(int(math.ceil(x * (1.0 - 1e-12))), 1)


def int_threshold(pred, peak):
    """Smallest integer M >= 1 satisfying a peak-unimodal predicate.

    pred must be false on an initial segment, with its log-space defect
    increasing up to ~peak and decreasing after, so the satisfying set is
    {1} or a final segment.  Verified on exit: pred(M) holds and pred(M-1)
    fails (unless M == 1).
    """
    if pred(1):
        return 1
    lo = max(int(math.floor(peak)), 1)
    if pred(lo):
        # peak estimate overshot the true crossing; bracket from below
        hi = lo
        lo = 1
    else:
        hi = max(lo + 1, 2)
        while not pred(hi):
            lo = hi
            hi *= 2
            if hi > _SEARCH_LIMIT:
                raise InfeasiblePlanError(
                    "threshold search exceeded %d samples; the accuracy "
                    "target is unattainable for this profile"
                    % (_SEARCH_LIMIT,))
    while hi - lo > 1:
        mid = (hi + lo) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    assert pred(hi) and not pred(hi - 1), "threshold postcondition failed"
    return hi


def lambert_wm1(z):
    """Lower real branch of w e^w = z for z in [-1/e, 0), by bisection.

    Solves the increasing log form f(w) = w + ln(-w) - ln(-z) on w <= -1.
    """
    if not -1.0 / math.e - 1e-15 <= z < 0.0:
        raise ValueError("lambert_wm1 needs z in [-1/e, 0), got %r" % (z,))
    target = math.log(-z)

    def f(w):
        return w + math.log(-w) - target

    hi = -1.0
    lo = -2.0
    while f(lo) > 0.0:
        lo *= 2.0
        if lo < -1e308:
            raise ValueError("lambert_wm1 bracketing failed for z=%r" % (z,))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _threshold_bar(L, eps, alpha, rhoH):
    """Smallest M with (1/2)ln L - ln eps + ln M/(2a+1) - M rho1 H <= 0."""
    const = 0.5 * math.log(L) - math.log(eps)
    inv = 1.0 / (2.0 * alpha + 1.0)

    def pred(M):
        return const + inv * math.log(M) - M * rhoH <= 0.0

    peak = inv / rhoH
    return int_threshold(pred, peak)


def _threshold_hat(alpha):
    """Smallest M with ln M/(2a+1) - M^{1/(2a+1)} <= 0 (that is M = 1)."""
    inv = 1.0 / (2.0 * alpha + 1.0)

    def pred(M):
        return inv * math.log(M) - M ** inv <= 0.0

    return int_threshold(pred, 1.0)


def _threshold_prime(L, eps, alpha, rhoH):
    """Smallest M with (1/2)ln L - ln eps - M rho1 H + M^{1/(2a+1)} <= 0."""
    const = 0.5 * math.log(L) - math.log(eps)
    p = 1.0 / (2.0 * alpha + 1.0)

    def pred(M):
        return const - M * rhoH + M ** p <= 0.0

    peak = (p / rhoH) ** (1.0 / (1.0 - p))
    return int_threshold(pred, peak)


def _tilde_crosscheck(L, eps, alpha, rhoH):
    """M_tilde via the product-logarithm closed form, or 1 if no crossing.

    Uses a plain ceiling: the tolerance ceiling would shift thresholds of
    order 1e12+ by many integers, while the closed form is only compared
    against the integer search within +-1 anyway.
    """
    b = (2.0 * alpha + 1.0) * rhoH
    z = -b * (eps / math.sqrt(L)) ** (2.0 * alpha + 1.0)
    if z < -1.0 / math.e:
        return 1
    value = -lambert_wm1(z) / b
    if not math.isfinite(value):
        raise InfeasiblePlanError("product-log threshold overflowed")
    return max(int(math.ceil(value)), 1)


class PlanResult:
    """One regime's coupled parameter choice for a target accuracy."""

    def __init__(self, epsilon, case_tag, L_eps, M_eps, h_eps, h_interval,
                 thresholds, feasible, reason, binding, p0_planned, notes,
                 candidates=None):
        self.epsilon = epsilon
        self.case_tag = case_tag
        self.L_eps = L_eps
        self.M_eps = M_eps
        self.h_eps = h_eps
        self.h_interval = h_interval
        self.thresholds = thresholds
        self.feasible = feasible
        self.reason = reason
        self.binding = binding
        self.p0_planned = p0_planned
        self.notes = notes
        self.candidates = candidates or []
        assert L_eps >= 1 and M_eps >= 1, "planned L and M must be >= 1"
        if feasible:
            assert 0.0 < h_eps <= self.h_interval[1] + 1e-300, \
                "planned h escapes its admissible interval"


def truncation_rank(epsilon, d, s):
    """L_eps = ceil(eps^{-2d/(4s+d)}) with near-integer tolerance."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1), got %r" % (epsilon,))
    rank = _iceil(epsilon ** (-2.0 * d / (4.0 * s + d)))
    if rank > 10 ** 8:
        raise InfeasiblePlanError(
            "accuracy target %g needs truncation rank %d, beyond any "
            "practical spectral computation" % (epsilon, rank))
    return rank


def _named_min(pairs):
    """(value, name) of the smallest candidate among (name, value) pairs."""
    name, value = min(pairs, key=lambda kv: kv[1])
    return value, name


def _named_max(pairs):
    name, value = max(pairs, key=lambda kv: kv[1])
    return value, name


def _spectral_terms(profile, L, H):
    """The two mesh bounds derived from the spectrum at rank L."""
    s = profile.s
    lam_next = profile.oracle.eigenvalue(L + 1)
    lam_L = profile.oracle.eigenvalue(L)
    return (H ** (1.0 / (4.0 * s)) * lam_next ** (1.0 / (2.0 * s)),
            lam_L ** (1.0 / s))


def _plan_case(profile, epsilon, L, case_tag):
    d, s, alpha, gamma = profile.d, profile.s, profile.alpha, profile.gamma
    cal = profile.calibration
    h0, beta = cal["h0"], cal["beta"]
    H = h_of_l(profile, L)
    rhoH = cal["rho1"] * H
    spec_a, spec_b = _spectral_terms(profile, L, H)
    spec_min = min(spec_a, spec_b)
    d21 = d * (2.0 * alpha + 1.0)
    thresholds = {}
    notes = ["p0 uses lambda_max(G)=%g from calibration; raw P1 mass "
             "matrices scale like h^d and are normalized by their top "
             "eigenvalue for planning" % (cal["lambda_max_mass"],)]

    if case_tag == CASE_SMALL:
        m_bar = _threshold_bar(L, epsilon, alpha, rhoH)
        thresholds["M_bar"] = m_bar
        m_terms = [
            ("M_bar", m_bar),
            ("rate", _iceil(epsilon ** (-(2.0 * alpha + 1.0) / alpha)
                            * L ** (gamma * (2.0 * alpha + 1.0) / alpha))),
            ("spectral", _iceil(spec_min ** (-d21))),
        ]
        M, m_name = _named_max(m_terms)
        h, h_name = _named_min([("M^{-1/(d(2a+1))}", M ** (-1.0 / d21)),
                                ("h0", h0)])
        interval = (h, h)
        feasible, reason = True, "point mesh width"
        binding = {"M": m_name, "h": h_name}
    else:
        if case_tag == CASE_LOG:
            m_tilde = _threshold_bar(L, epsilon, alpha, rhoH)
            thresholds["M_tilde"] = m_tilde
            thresholds["M_tilde_productlog"] = _tilde_crosscheck(
                L, epsilon, alpha, rhoH)
            assert abs(m_tilde - thresholds["M_tilde_productlog"]) <= 1, \
                "integer search and product-log threshold disagree"
            expo = (2.0 * (2.0 * s + d) * beta + 2.0 * s * d * gamma) / (s * d)
            m_terms = [("M_tilde", m_tilde),
                       ("beta_rate", _iceil(L ** expo * epsilon ** -2.0))]
        else:
            m_hat = _threshold_hat(alpha)
            m_prime = _threshold_prime(L, epsilon, alpha, rhoH)
            thresholds["M_hat"] = m_hat
            thresholds["M_prime"] = m_prime
            m_terms = [
                ("M_hat", m_hat),
                ("M_prime", m_prime),
                ("rate", _iceil(epsilon ** (-(2.0 * alpha + 1.0) / alpha)
                                * L ** (gamma * (2.0 * alpha + 1.0) / alpha))),
                ("spectral", _iceil(spec_min ** (-d21))),
            ]
        M, m_name = _named_max(m_terms)
        lower_terms = [("log-balance",
                        math.exp((0.5 * math.log(L) - math.log(epsilon)
                                  - M * rhoH) / d))]
        if case_tag == CASE_RATE:
            lower_terms.append(("rate-domination",
                                math.exp(-(M ** (1.0 / (2.0 * alpha + 1.0))) / d)))
        lower, lo_name = _named_max(lower_terms)
        upper_terms = [("H^{1/4s} lam_{L+1}^{1/2s}", spec_a),
                       ("lam_L^{1/s}", spec_b),
                       ("M^{-1/(d(2a+1))}", M ** (-1.0 / d21)),
                       ("h0", h0)]
        upper, up_name = _named_min(upper_terms)
        interval = (lower, upper)
        feasible = lower <= upper
        h = upper if feasible else float("nan")
        h_name = up_name
        reason = "admissible mesh interval nonempty" if feasible else (
            "infeasible: h lower bound %.6e (%s) exceeds upper bound %.6e (%s)"
            % (lower, lo_name, upper, up_name))
        binding = {"M": m_name, "h_lower": lo_name, "h_upper": up_name}

    if feasible:
        tau = max(2 * math.ceil(M ** (1.0 / (2.0 * alpha + 1.0)) / 2.0), 2)
        Q_h = int(round(1.0 / h) + 1) ** d
        p0 = p0_bound(profile, Q_h, tau, M, L)
    else:
        p0 = float("nan")
    return PlanResult(epsilon, case_tag, L, M, h, interval, thresholds,
                      feasible, reason, binding, p0, notes)


_PREFERENCE = [CASE_LOG, CASE_RATE, CASE_SMALL]


def _case_or_infeasible(profile, epsilon, L, tag):
    """One case's plan, demoting threshold overflows to infeasibility.

    A sample-count search that exceeds the search limit only rules out the
    case being evaluated, so it must not abort the other candidates.  The
    placeholder M_eps=1 keeps the result well formed; the reason string
    carries the overflow message.
    """
    try:
        return _plan_case(profile, epsilon, L, tag)
    except InfeasiblePlanError as exc:
        nan = float("nan")
        return PlanResult(epsilon, tag, L, 1, nan, (nan, nan), {}, False,
                          "infeasible: %s" % (exc,), {}, nan, [])


def plan(profile, epsilon, regime=None):
    """Couple (L, M, h) for a target accuracy, optionally forcing a regime.

    Without an override the planner evaluates all three cases and returns
    the feasible one with the smallest sample count, preferring the
    log-dominated large-Q_h case on ties.  A case whose sample-count
    search overflows is reported as an infeasible candidate; only when
    every case is infeasible does the planner raise.
    """
    L = truncation_rank(epsilon, profile.d, profile.s)
    cases = {tag: _case_or_infeasible(profile, epsilon, L, tag)
             for tag in (CASE_SMALL, CASE_LOG, CASE_RATE)}
    candidates = [(tag, cases[tag].M_eps, cases[tag].feasible)
                  for tag in (CASE_SMALL, CASE_LOG, CASE_RATE)]
    if regime is not None:
        tags = {1: CASE_SMALL, 2: CASE_LOG, 3: CASE_RATE}
        if regime not in tags:
            raise ValueError("regime override must be 1, 2 or 3, got %r"
                             % (regime,))
        chosen = cases[tags[regime]]
    else:
        feasible = [c for c in cases.values() if c.feasible]
        if not feasible:
            raise InfeasiblePlanError(
                "no regime is feasible at epsilon=%g -- %s" % (epsilon,
                "; ".join("%s: %s" % (tag, cases[tag].reason)
                          for tag in (CASE_SMALL, CASE_LOG, CASE_RATE))))
        chosen = min(feasible,
                     key=lambda c: (c.M_eps, _PREFERENCE.index(c.case_tag)))
    chosen.candidates = candidates
    return chosen


class VerifyReport:
    """Measured accuracy of a study cell against its planning target."""

    def __init__(self, epsilon, ratio, row, m_matched, notes):
        self.epsilon = epsilon
        self.ratio = ratio
        self.row = row
        self.m_matched = m_matched
        self.notes = notes


def verify_plan(plan_result, study_rows):
    """Compare planned accuracy against measured study means.

    Picks the study cell with the planned L and mesh (nearest M if the
    planned count was not run) and reports mean_total / epsilon.  The
    calibration factor is reported, never asserted: the underlying
    constants are not quantified.
    """
    n_planned = int(round(1.0 / plan_result.h_eps))
    rows = [r for r in study_rows
            if r.ok and r.L == plan_result.L_eps and r.n == n_planned]
    if not rows:
        raise ValueError(
            "no study cell matches planned L=%d, n=%d"
            % (plan_result.L_eps, n_planned))
    row = min(rows, key=lambda r: abs(r.M - plan_result.M_eps))
    m_matched = row.M == plan_result.M_eps
    notes = [] if m_matched else [
        "planned M=%d not present; nearest run M=%d used"
        % (plan_result.M_eps, row.M)]
    return VerifyReport(plan_result.epsilon, row.mean_total / plan_result.epsilon,
                        row, m_matched, notes)
