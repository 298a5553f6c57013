"""YAML-backed configuration shared by all command-line tools.

Schema (all sections optional unless a command needs them):

    field:       kind (brownian), d (1|2), delta, s (default 0.5 - delta)
    sampling:    mode (nodal|projection), kl_trunc (projection only)
    estimator:   kind (MLE|Tapered|Exact), alpha (Tapered only)
    study:       ns, Ms, Ls (nonempty int lists), n_rep
    quadrature:  q (2..6)
    calibration: C1, C2, C, h0, rho1, lambda_max_mass, beta
    seed:        integer
    output:      artifact directory

Commands that operate on a single (n, M, L) combination use the first
element of each study list.  Validation failures raise ConfigError with
the offending field named.
"""

import yaml

from .errors import ConfigError
from .fields import MODE_NODAL, MODE_PROJECTION
from .planner import DEFAULT_CALIBRATION

_MODES = {"nodal": MODE_NODAL, "projection": MODE_PROJECTION,
          MODE_NODAL: MODE_NODAL, MODE_PROJECTION: MODE_PROJECTION}
_ESTIMATORS = ("MLE", "Tapered", "Exact")


class StudyConfig:
    """Validated, picklable settings for sampling, estimation and studies."""

    def __init__(self, field_kind="brownian", d=1, delta=1e-3, s=None,
                 mode=MODE_NODAL, kl_trunc=None, estimator="MLE", alpha=1.0,
                 ns=(16,), Ms=(100,), Ls=(3,), n_rep=2, q=2,
                 calibration=None, seed=0, out_dir="out"):
        self.field_kind = field_kind
        self.d = d
        self.delta = delta
        self.s = s if s is not None else 0.5 - delta
        self.mode = mode
        self.kl_trunc = kl_trunc
        self.estimator = estimator
        self.alpha = alpha
        self.ns = list(ns)
        self.Ms = list(Ms)
        self.Ls = list(Ls)
        self.n_rep = n_rep
        self.q = q
        cal = dict(DEFAULT_CALIBRATION)
        if calibration:
            cal.update(calibration)
        self.calibration = cal
        self.seed = seed
        self.out_dir = out_dir
        self._validate()

    def _validate(self):
        if self.field_kind != "brownian":
            raise ConfigError("field.kind: only 'brownian' is supported, got %r"
                              % (self.field_kind,))
        if self.d not in (1, 2):
            raise ConfigError("field.d: must be 1 or 2, got %r" % (self.d,))
        if not (isinstance(self.delta, float) and 0.0 < self.delta < 0.5):
            raise ConfigError("field.delta: must be a float in (0, 0.5), got %r"
                              % (self.delta,))
        if not 0.0 < self.s <= 0.5:
            raise ConfigError("field.s: must lie in (0, 0.5], got %r" % (self.s,))
        if self.mode not in _MODES:
            raise ConfigError("sampling.mode: must be 'nodal' or 'projection', "
                              "got %r" % (self.mode,))
        self.mode = _MODES[self.mode]
        if self.mode == MODE_PROJECTION:
            if not (isinstance(self.kl_trunc, int) and self.kl_trunc >= 1):
                raise ConfigError("sampling.kl_trunc: projection mode needs an "
                                  "integer >= 1, got %r" % (self.kl_trunc,))
        if self.estimator not in _ESTIMATORS:
            raise ConfigError("estimator.kind: must be one of %s, got %r"
                              % ("/".join(_ESTIMATORS), self.estimator))
        if self.estimator == "Tapered" and not (
                isinstance(self.alpha, (int, float)) and self.alpha > 0):
            raise ConfigError("estimator.alpha: tapering needs alpha > 0, "
                              "got %r" % (self.alpha,))
        for name, lst, low in (("study.ns", self.ns, 2),
                               ("study.Ms", self.Ms, 1),
                               ("study.Ls", self.Ls, 1)):
            if not lst:
                raise ConfigError("%s: list must be nonempty" % (name,))
            for v in lst:
                if not (isinstance(v, int) and v >= low):
                    raise ConfigError("%s: entries must be integers >= %d, "
                                      "got %r" % (name, low, v))
        min_q = (min(self.ns) + 1) ** self.d
        if max(self.Ls) > min_q:
            raise ConfigError(
                "study.Ls: truncation rank L=%d exceeds the smallest dof "
                "count Q_h=%d (n=%d, d=%d)"
                % (max(self.Ls), min_q, min(self.ns), self.d))
        if not (isinstance(self.n_rep, int) and self.n_rep >= 1):
            raise ConfigError("study.n_rep: must be an integer >= 1, got %r"
                              % (self.n_rep,))
        if not (isinstance(self.q, int) and 2 <= self.q <= 6):
            raise ConfigError("quadrature.q: must be an integer in [2, 6], "
                              "got %r" % (self.q,))
        for key, val in self.calibration.items():
            if key not in DEFAULT_CALIBRATION:
                raise ConfigError("calibration.%s: unknown constant" % (key,))
            if not (isinstance(val, (int, float)) and val > 0):
                raise ConfigError("calibration.%s: must be > 0, got %r"
                                  % (key, val))
        if not (isinstance(self.seed, int) and self.seed >= 0):
            raise ConfigError("seed: must be a nonnegative integer, got %r"
                              % (self.seed,))
        if not isinstance(self.out_dir, str) or not self.out_dir:
            raise ConfigError("output: must be a nonempty path string, got %r"
                              % (self.out_dir,))

    def to_dict(self):
        """Flat JSON-ready view of every resolved setting."""
        return dict(field_kind=self.field_kind, d=self.d, delta=self.delta,
                    s=self.s, mode=self.mode, kl_trunc=self.kl_trunc,
                    estimator=self.estimator, alpha=self.alpha, ns=self.ns,
                    Ms=self.Ms, Ls=self.Ls, n_rep=self.n_rep, q=self.q,
                    calibration=dict(self.calibration), seed=self.seed,
                    out_dir=self.out_dir)


def from_dict(raw):
    """Build a StudyConfig from the nested mapping of a YAML document."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root: must be a mapping, got %r"
                          % (type(raw).__name__,))
    known = {"field", "sampling", "estimator", "study", "quadrature",
             "calibration", "seed", "output"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError("unknown config section(s): %s"
                          % (", ".join(sorted(unknown)),))

    def section(name):
        sec = raw.get(name, {})
        if sec is None:
            sec = {}
        if not isinstance(sec, dict):
            raise ConfigError("%s: must be a mapping" % (name,))
        return sec

    field = section("field")
    sampling = section("sampling")
    estimator = section("estimator")
    study = section("study")
    quad = section("quadrature")
    cal = section("calibration")

    kwargs = {}
    if "kind" in field:
        kwargs["field_kind"] = field["kind"]
    if "d" in field:
        kwargs["d"] = field["d"]
    if "delta" in field:
        kwargs["delta"] = float(field["delta"])
    if "s" in field:
        kwargs["s"] = float(field["s"])
    if "mode" in sampling:
        kwargs["mode"] = sampling["mode"]
    if "kl_trunc" in sampling:
        kwargs["kl_trunc"] = sampling["kl_trunc"]
    if "kind" in estimator:
        kwargs["estimator"] = estimator["kind"]
    if "alpha" in estimator:
        kwargs["alpha"] = float(estimator["alpha"])
    for key in ("ns", "Ms", "Ls", "n_rep"):
        if key in study:
            kwargs[key] = study[key]
    if "q" in quad:
        kwargs["q"] = quad["q"]
    if cal:
        kwargs["calibration"] = cal
    if "seed" in raw:
        kwargs["seed"] = raw["seed"]
    if "output" in raw:
        kwargs["out_dir"] = raw["output"]
    return StudyConfig(**kwargs)


def load_config(path, seed=None, out_dir=None):
    """Load and validate a YAML config file, with optional CLI overrides."""
    try:
        with open(path, "r") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("config file %s cannot be read: %s" % (path, exc))
    except yaml.YAMLError as exc:
        raise ConfigError("config file %s is not valid YAML: %s" % (path, exc))
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config root: must be a mapping")
    raw = raw or {}
    if seed is not None:
        raw["seed"] = seed
    if out_dir is not None:
        raw["output"] = out_dir
    return from_dict(raw)
