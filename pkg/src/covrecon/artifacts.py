"""Deterministic artifact serialization.

Primary artifacts (CSV tables, covariance text, JSON reports) are
byte-reproducible: floats are written as %.17g (CSV/text) or shortest
round-trip repr (JSON), JSON keys are sorted, and no timestamps appear.
Every primary artifact embeds the resolved config and the library version,
either as leading '# ' comment lines (CSV/text) or top-level JSON keys.
Timestamps live only in *.meta.json sidecars, which are exempt from
byte-identity.

File formats:
  covariance text: comment lines, then a header line "Q_h kind tau alpha"
    (alpha written as '-' when absent), then Q_h whitespace-separated rows.
  spectrum CSV: columns l, lambda, v_1..v_Q (generalized coefficient
    vectors, one eigenpair per row).
  rate CSV: columns M, replication, error, error_sq.
  study summary CSV: columns L, h, M, mean_total, mean_e3, stderr, n_rep.
  study diagnostics CSV: per-cell columns index, L, h, M, ok, error,
    mean_e1, mean_e2, gap_fail_fraction, p0, tau, lambda1_dev.
  study rates CSV: columns quantity, slope, n_points.
"""

import datetime
import json
import math
import os

import numpy as np

from ._version import __version__
from .errors import ConfigError
from .estimators import TaperedCovariance
from .mercer import CellResult


def fmt(x):
    """Canonical text form of a scalar: %.17g floats, plain ints/strings."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def _jsonify(obj):
    """Recursively convert to plain JSON types; non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def canonical_json(obj):
    return json.dumps(_jsonify(obj), sort_keys=True, separators=(",", ":"))


def _comment_lines(config):
    lines = ["# covrecon %s" % (__version__,)]
    if config is not None:
        cfg = config.to_dict() if hasattr(config, "to_dict") else config
        lines.append("# config %s" % (canonical_json(cfg),))
    return lines


def _write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def write_sidecar(path, config, **extra):
    """Timestamped companion metadata; the only artifact kind with a clock."""
    cfg = config.to_dict() if hasattr(config, "to_dict") else config
    payload = dict(version=__version__, config=cfg,
                   created=datetime.datetime.now(datetime.timezone.utc)
                   .isoformat(), **extra)
    _write_text(path, json.dumps(_jsonify(payload), sort_keys=True, indent=2)
                + "\n")


def write_json(path, payload, config=None):
    """Primary JSON artifact with embedded version and resolved config."""
    cfg = config.to_dict() if hasattr(config, "to_dict") else config
    doc = dict(payload)
    doc["version"] = __version__
    if cfg is not None:
        doc["config"] = cfg
    _write_text(path, json.dumps(_jsonify(doc), sort_keys=True, indent=2)
                + "\n")


def read_json(path):
    with open(path, "r") as fh:
        return json.load(fh)


def write_csv(path, columns, rows, config=None):
    """Primary CSV artifact: comment header, column line, formatted rows."""
    lines = _comment_lines(config)
    lines.append(",".join(columns))
    for row in rows:
        cells = [fmt(c).replace(",", ";") for c in row]
        lines.append(",".join(cells))
    _write_text(path, "\n".join(lines) + "\n")


def read_csv(path):
    """Parse a primary CSV artifact into (columns, rows of strings)."""
    with open(path, "r") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    body = [ln for ln in lines if not ln.startswith("#")]
    if not body:
        raise ConfigError("CSV file %s has no header line" % (path,))
    columns = body[0].split(",")
    return columns, [ln.split(",") for ln in body[1:]]


def write_batch_csv(path, batch, config=None):
    """One sample per row, %.17g coefficients, comma separated."""
    lines = _comment_lines(config)
    for row in batch.coeffs:
        lines.append(",".join(fmt(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def read_batch_csv(path):
    with open(path, "r") as fh:
        rows = [ln.split(",") for ln in fh.read().splitlines()
                if ln.strip() and not ln.startswith("#")]
    return np.array([[float(c) for c in row] for row in rows])


def write_covariance(path, cov, config=None):
    """Covariance text format with the "Q_h kind tau alpha" header line."""
    lines = _comment_lines(config)
    alpha_s = "-" if cov.alpha is None else fmt(float(cov.alpha))
    lines.append("%d %s %d %s"
                 % (cov.dof_count, cov.estimator_kind, cov.tau, alpha_s))
    for row in cov.matrix:
        lines.append(" ".join(fmt(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def read_covariance(path):
    """Round-trip the covariance text format (sample count is not stored)."""
    with open(path, "r") as fh:
        lines = [ln for ln in fh.read().splitlines()
                 if ln.strip() and not ln.startswith("#")]
    head = lines[0].split()
    if len(head) != 4:
        raise ConfigError("covariance file %s: header must be "
                          "'Q_h kind tau alpha'" % (path,))
    Q, kind, tau = int(head[0]), head[1], int(head[2])
    alpha = None if head[3] == "-" else float(head[3])
    if len(lines) - 1 != Q:
        raise ConfigError("covariance file %s: expected %d rows, found %d"
                          % (path, Q, len(lines) - 1))
    matrix = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    return TaperedCovariance(matrix, tau=tau, alpha=alpha,
                             estimator_kind=kind, M=0)


def write_spectrum_csv(path, spectrum, L, config=None):
    """Top-L eigenpairs: index, eigenvalue, generalized vector components."""
    Q = spectrum.dof_count
    columns = ["l", "lambda"] + ["v_%d" % (j + 1,) for j in range(Q)]
    rows = []
    for ell in range(1, L + 1):
        rows.append([ell, spectrum.eigenvalues[ell - 1]]
                    + list(spectrum.gen_vectors[:, ell - 1]))
    write_csv(path, columns, rows, config)


def write_rate_csv(path, rows, config=None):
    """Rate-study records (M, replication, error, error_sq)."""
    write_csv(path, ["M", "replication", "error", "error_sq"], rows, config)


_SUMMARY_COLUMNS = ["L", "h", "M", "mean_total", "mean_e3", "stderr", "n_rep"]
_DIAG_COLUMNS = ["index", "L", "h", "M", "ok", "error", "mean_e1", "mean_e2",
                 "gap_fail_fraction", "p0", "tau", "lambda1_dev"]


def write_study_csvs(out_dir, results, rates, config=None):
    """Summary, per-cell diagnostics and regression-slope tables of a study."""
    summary = os.path.join(out_dir, "study_summary.csv")
    write_csv(summary, _SUMMARY_COLUMNS,
              [[r.L, r.h, r.M, r.mean_total, r.mean_e3, r.stderr, r.n_rep]
               for r in results if r.ok], config)
    diag = os.path.join(out_dir, "study_diagnostics.csv")
    write_csv(diag, _DIAG_COLUMNS,
              [[r.index, r.L, r.h, r.M, r.ok, r.error or "", r.mean_e1,
                r.mean_e2, r.gap_fail_fraction, r.p0, r.tau, r.lambda1_dev]
               for r in results], config)
    rates_path = os.path.join(out_dir, "study_rates.csv")
    write_csv(rates_path, ["quantity", "slope", "n_points"], rates, config)
    return summary, diag, rates_path


_CELL_FLOATS = ("mean_total", "mean_e1", "mean_e2", "mean_e3", "stderr",
                "gap_fail_fraction", "p0", "lambda1_dev")


def cell_path(cell_dir, index):
    return os.path.join(cell_dir, "cell_%05d.json" % (index,))


def save_cell(cell_dir, result, config=None):
    write_json(cell_path(cell_dir, result.index), dict(cell=result.to_dict()),
               config)


def load_cell(cell_dir, index):
    """Reload a persisted study cell, or None when absent/corrupt."""
    path = cell_path(cell_dir, index)
    if not os.path.exists(path):
        return None
    try:
        raw = read_json(path)["cell"]
    except (OSError, ValueError, KeyError):
        return None
    for key in _CELL_FLOATS:
        if raw.get(key) is None:
            raw[key] = float("nan")
    return CellResult.from_dict(raw)
