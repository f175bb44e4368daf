"""JSON/CSV file formats for graphs, banks, filters, checkpoints and results.

Floats are written with ``repr`` precision so JSON round trips are exact.
Headerless matrix CSVs store one signal per line (the transpose of the
in-memory ``(N, S)`` layout); ``#`` lines carry provenance and are skipped
on load.
"""

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError
from .filtering import ChebyshevFilter
from .graphs import Graph
from .kernel import BaselineKernel, ShapedFilterBank, eval_bank

BANK_FORMAT_VERSION = 1
FILTER_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1
RESPONSE_GRID_POINTS = 512


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def config_hash(config):
    """Stable short hash of a JSON-serializable config."""
    text = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def provenance(config):
    return {"config_hash": config_hash(config), "version": __version__}


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON ({exc})") from exc


# -- graphs -------------------------------------------------------------------


def graph_to_dict(g):
    return {
        "n": g.num_nodes,
        "edges": [[u, v, w] for u, v, w in g.edges()],
        "family": g.family,
        "params": g.params,
        "seed": g.seed,
    }


def graph_from_dict(d, path="<graph>"):
    try:
        return Graph.from_edges(int(d["n"]), d["edges"], family=d.get("family", "custom"),
                                params=d.get("params", {}), seed=d.get("seed"))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, f"bad graph document ({exc})") from exc


# -- banks --------------------------------------------------------------------


def bank_to_dict(bank):
    return {
        "format_version": BANK_FORMAT_VERSION,
        "lambda_max": bank.lambda_max,
        "input_normalization": "divide_by_lambda_max",
        "activation": bank.baseline.activation,
        "layer_sizes": bank.baseline.layer_sizes,
        "weights": [w.tolist() for w in bank.baseline.weights],
        "biases": [b.tolist() for b in bank.baseline.biases],
        "mu_raw": bank.mu_raw.tolist(),
        "gamma_raw": bank.gamma_raw.tolist(),
        "amplitude": bank.amplitude.tolist(),
    }


def bank_from_dict(d, path="<bank>"):
    try:
        if int(d["format_version"]) != BANK_FORMAT_VERSION:
            raise FormatError(path, f"unsupported bank format {d['format_version']}")
        weights = [np.array(w, dtype=float).reshape(len(w), -1) for w in d["weights"]]
        biases = [np.array(b, dtype=float) for b in d["biases"]]
        sizes = [weights[0].shape[1]] + [w.shape[0] for w in weights]
        if list(d["layer_sizes"]) != sizes:
            raise FormatError(path, "layer_sizes disagree with weight shapes")
        baseline = BaselineKernel(weights, biases, d["activation"])
        return ShapedFilterBank(baseline, d["mu_raw"], d["gamma_raw"], d["amplitude"], d["lambda_max"])
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(path, f"bad bank document ({exc})") from exc


def filter_to_dict(f):
    return {
        "version": FILTER_FORMAT_VERSION,
        "lambda_max": f.lambda_max,
        "damping": f.damping,
        "coefficients": f.coefficients.tolist(),
    }


def filter_from_dict(d, path="<filter>"):
    try:
        return ChebyshevFilter(np.array(d["coefficients"], dtype=float), d["lambda_max"], d["damping"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, f"bad filter document ({exc})") from exc


def checkpoint_to_dict(state, extra=None):
    out = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "bank": bank_to_dict(state.bank),
        "step": state.step,
        "adam_m": {k: v.tolist() for k, v in state.m.items()},
        "adam_v": {k: v.tolist() for k, v in state.v.items()},
    }
    if extra:
        out.update(extra)
    return out


def checkpoint_from_dict(d, path="<checkpoint>"):
    from .training import TrainingState

    try:
        bank = bank_from_dict(d["bank"], path)
        state = TrainingState.fresh(bank)
        for name, arr in bank.named_parameters():
            state.m[name] = np.array(d["adam_m"][name], dtype=float).reshape(arr.shape)
            state.v[name] = np.array(d["adam_v"][name], dtype=float).reshape(arr.shape)
        state.step = int(d["step"])
        return state
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, f"bad checkpoint ({exc})") from exc


def load_bank(path):
    """A bank from either a bare bank JSON or a checkpoint JSON."""
    d = read_json(path)
    if isinstance(d, dict) and "bank" in d:
        d = d["bank"]
    return bank_from_dict(d, path)


# -- CSV ----------------------------------------------------------------------


def _comment_lines(meta):
    return "".join(f"# {k}={meta[k]}\n" for k in sorted(meta)) if meta else ""


def write_matrix_csv(path, matrix, meta=None):
    """``(N, S)`` matrix written as S lines of N values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(_comment_lines(meta))
    for column in np.asarray(matrix, dtype=float).T:
        buf.write(",".join(repr(float(v)) for v in column) + "\n")
    path.write_text(buf.getvalue())


def read_matrix_csv(path):
    path = Path(path)
    rows = []
    try:
        with path.open() as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                rows.append([float(tok) for tok in line.split(",")])
    except ValueError as exc:
        raise FormatError(path, f"non-numeric entry ({exc})") from exc
    if not rows:
        raise FormatError(path, "no data rows")
    if len({len(r) for r in rows}) != 1:
        raise FormatError(path, "ragged rows")
    return np.array(rows).T


def write_table_csv(path, rows, columns, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(_comment_lines(meta))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    path.write_text(buf.getvalue())


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def read_table_csv(path):
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_loss_history(path, history, meta=None):
    rows = [vars(r) for r in history]
    write_table_csv(path, rows, ["epoch", "total", "data", "smooth", "shape"], meta)


def response_table(bank, points=RESPONSE_GRID_POINTS, ground_truth=None):
    """Rows of ``lambda, response_total, response_component_k`` on a uniform grid."""
    lam = np.linspace(0.0, bank.lambda_max, points)
    total, terms = eval_bank(bank, lam, components=True)
    columns = ["lambda", "response_total"] + [f"response_component_{k + 1}" for k in range(bank.K)]
    gt = ground_truth(lam) if ground_truth is not None else None
    if gt is not None:
        columns.append("ground_truth")
    rows = []
    for j in range(points):
        row = {"lambda": lam[j], "response_total": total[j]}
        for k in range(bank.K):
            row[f"response_component_{k + 1}"] = terms[k, j]
        if gt is not None:
            row["ground_truth"] = gt[j]
        rows.append(row)
    return rows, columns


def write_response_csv(path, bank, meta=None, ground_truth=None, points=RESPONSE_GRID_POINTS):
    rows, columns = response_table(bank, points, ground_truth)
    write_table_csv(path, rows, columns, meta)
