"""Command-line harness: generate data, fit banks, run transfer sweeps, evaluate.

Configs are YAML with one section per command plus a shared ``training``
section. Any key can be overridden with ``--set section.key=value`` (the
value is parsed as YAML). Unknown keys are rejected before any compute.

Exit codes: 0 success, 2 config error, 3 I/O or file-format error,
4 numeric failure.
"""

import argparse
import copy
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import io as sio
from .errors import (
    CapabilityError,
    ConfigError,
    ContractError,
    DegenerateInputError,
    FormatError,
    NumericError,
    ParameterError,
    SpectrumRangeWarning,
)
from .experiments import (
    GroundTruthFilter,
    derive_seed,
    make_ground_truth,
    make_signals,
    structure_sweep,
    run_transfer_experiment,
)
from .filtering import apply_chebyshev, apply_exact, project_chebyshev
from .graphs import DENSE_THRESHOLD, build_laplacian, canonical_family, canonical_kind, generate_graph
from .kernel import eval_bank
from .metrics import mse, spectral_discrepancy
from .training import SupervisedDataset, TrainingConfig, evaluate_mse, fit, zero_shot_bank

log = logging.getLogger("spectral_shaping")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "generate": {
        "family": "erdos_renyi",
        "params": {},
        "n": 32,
        "seed": 0,
        "kind": "combinatorial",
        "num_peaks": 1,
        "min_separation": None,
        "regime": "gaussian_iid",
        "num_signals": 64,
        "target_degree": 256,
    },
    "training": TrainingConfig().to_dict(),
    "fit": {"k": 1},
    "transfer": {
        "first_seed": 0,
        "num_seeds": 10,
        "source_family": "erdos_renyi",
        "targets": ["erdos_renyi", "barabasi_albert"],
        "regimes": ["gaussian_iid"],
        "k": 4,
        "num_source": 256,
        "num_target": 16,
        "num_peaks": 2,
        "kind": "combinatorial",
        "pretrain": {},
        "adapt": {},
        "verify_freeze": False,
    },
    "eval": {"mode": "exact", "degree": 64, "damping": "none"},
}


# -- config -------------------------------------------------------------------


def _merge(base, update, where):
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        free_form = isinstance(base[key], dict) and (not base[key] or key in ("pretrain", "adapt"))
        if isinstance(base[key], dict) and not free_form:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key} must be a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _parse_override(text):
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw)
    node = {}
    cur = node
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    return node


def load_config(path=None, overrides=(), seed=None):
    """Defaults, then the YAML file, then ``--set`` overrides, then ``--seed``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        cfg = _merge(cfg, data, "")
    for text in overrides:
        cfg = _merge(cfg, _parse_override(text), "")
    if seed is not None:
        cfg["generate"]["seed"] = seed
        cfg["training"]["seed"] = seed
        cfg["transfer"]["first_seed"] = seed
    _validate(cfg)
    return cfg


def _validate(cfg):
    try:
        TrainingConfig.from_dict(cfg["training"])
        for part in ("pretrain", "adapt"):
            TrainingConfig.from_dict({**cfg["training"], **cfg["transfer"][part]})
        gen = cfg["generate"]
        canonical_family(gen["family"])
        canonical_kind(gen["kind"])
        canonical_kind(cfg["transfer"]["kind"])
        for fam in cfg["transfer"]["targets"]:
            canonical_family(fam)
        canonical_family(cfg["transfer"]["source_family"])
        if int(gen["n"]) < 2 or int(gen["num_signals"]) < 1:
            raise ConfigError("generate.n must be >= 2 and generate.num_signals >= 1")
        if int(cfg["fit"]["k"]) < 1 or int(cfg["transfer"]["k"]) < 1:
            raise ConfigError("k must be >= 1")
        if cfg["eval"]["mode"] not in ("exact", "chebyshev"):
            raise ConfigError("eval.mode must be 'exact' or 'chebyshev'")
        if cfg["eval"]["damping"] not in ("none", "jackson"):
            raise ConfigError("eval.damping must be 'none' or 'jackson'")
        if int(cfg["eval"]["degree"]) < 1:
            raise ConfigError("eval.degree must be >= 1")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


# -- helpers ------------------------------------------------------------------


def _meta(section_cfg, command):
    return {"command": command, **sio.provenance(section_cfg)}


def _schema(path, rows_are, meta):
    sio.write_json(path.with_suffix(".schema.json"), {
        "layout": "column-major: one line per signal (column of the N x S matrix)",
        "lines": rows_are,
        "comment_prefix": "#",
        "delimiter": ",",
        "provenance": meta,
    })


def _load_dataset_dir(data_dir):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"dataset directory {data_dir} does not exist")
    manifest = sio.read_json(data_dir / "dataset.json")
    graph = sio.graph_from_dict(sio.read_json(data_dir / "graph.json"), data_dir / "graph.json")
    inputs = sio.read_matrix_csv(data_dir / "inputs.csv")
    targets = sio.read_matrix_csv(data_dir / "targets.csv")
    try:
        gt = GroundTruthFilter.from_dict(sio.read_json(data_dir / "ground_truth.json"))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(data_dir / "ground_truth.json", f"bad ground truth ({exc})") from exc
    if inputs.shape != targets.shape or inputs.shape[0] != graph.num_nodes:
        raise FormatError(data_dir, f"inputs {inputs.shape} / targets {targets.shape} do not match N={graph.num_nodes}")
    return manifest, graph, inputs, targets, gt


# -- commands -----------------------------------------------------------------


def cmd_generate(cfg, out):
    gen = cfg["generate"]
    meta = _meta(gen, "generate")
    seed = int(gen["seed"])
    g = generate_graph(gen["family"], gen["params"], seed=derive_seed(seed, "graph"), n=int(gen["n"]))
    lap = build_laplacian(g, gen["kind"])
    sep = None if gen["min_separation"] is None else float(gen["min_separation"]) * lap.lambda_max
    gt = make_ground_truth(int(gen["num_peaks"]), lap.lambda_max, derive_seed(seed, "ground_truth"), min_separation=sep)
    n_sig = int(gen["num_signals"])
    if g.num_nodes <= DENSE_THRESHOLD:
        decomp = lap._decomposition
        x = make_signals(gen["regime"], decomp, n_sig, derive_seed(seed, "signals"), lap=lap)
        y = apply_exact(decomp, gt(decomp.eigenvalues), x)
        method = "exact"
    else:
        if gen["regime"] != "gaussian_iid":
            raise CapabilityError(f"regime {gen['regime']!r} needs an eigendecomposition; N={g.num_nodes} is too large")
        x = np.random.default_rng(derive_seed(seed, "signals")).standard_normal((g.num_nodes, n_sig))
        f = project_chebyshev(gt, lap.lambda_max, int(gen["target_degree"]))
        y = apply_chebyshev(f, lap, x)
        method = f"chebyshev(R={f.degree})"

    out.mkdir(parents=True, exist_ok=True)
    sio.write_json(out / "graph.json", {**sio.graph_to_dict(g), "provenance": meta})
    sio.write_json(out / "ground_truth.json", {**gt.to_dict(), "provenance": meta})
    for name, mat in (("inputs", x), ("targets", y)):
        sio.write_matrix_csv(out / f"{name}.csv", mat, meta)
        _schema(out / f"{name}.csv", f"{n_sig} signals x {g.num_nodes} node values", meta)
    sio.write_json(out / "dataset.json", {
        "n": g.num_nodes,
        "num_signals": n_sig,
        "kind": lap.kind,
        "lambda_max": lap.lambda_max,
        "regime": gen["regime"],
        "target_method": method,
        "config": gen,
        "provenance": meta,
    })
    log.info("generated %s N=%d, %d signals -> %s", g.family, g.num_nodes, n_sig, out)


def cmd_fit(cfg, out, data_dir):
    manifest, graph, inputs, targets, gt = _load_dataset_dir(data_dir)
    section = {"training": cfg["training"], "fit": cfg["fit"], "dataset": manifest["provenance"]}
    meta = _meta(section, "fit")
    lap = build_laplacian(graph, manifest["kind"])
    decomp = lap._decomposition
    if decomp is None:
        raise CapabilityError("fitting needs an eigendecomposition; graph is above the dense threshold")
    ds = SupervisedDataset(lap, decomp, inputs, targets)
    tcfg = TrainingConfig.from_dict(cfg["training"])
    state, history = fit(ds, int(cfg["fit"]["k"]), tcfg)
    bank = state.bank
    lam = decomp.eigenvalues
    metrics = {
        "mse": evaluate_mse(bank, ds),
        "e_spec": spectral_discrepancy(eval_bank(bank, lam), gt(lam)),
        "K": bank.K,
        "steps": state.step,
        "best_train_mse": state.best_mse,
        "mu": bank.mu.tolist(),
        "gamma": bank.gamma.tolist(),
        "amplitude": bank.amplitude.tolist(),
        "provenance": meta,
    }
    if not all(np.isfinite([metrics["mse"], metrics["e_spec"]])):
        raise NumericError("fit produced non-finite metrics")
    out.mkdir(parents=True, exist_ok=True)
    sio.write_json(out / "checkpoint.json", sio.checkpoint_to_dict(state, {"provenance": meta}))
    sio.write_loss_history(out / "loss_history.csv", history, meta)
    sio.write_response_csv(out / "response.csv", bank, meta, ground_truth=gt)
    sio.write_json(out / "metrics.json", metrics)
    log.info("fit K=%d: mse=%.6g e_spec=%.6g", bank.K, metrics["mse"], metrics["e_spec"])


def cmd_eval(cfg, out, checkpoint, data_dir):
    ev = cfg["eval"]
    manifest, graph, inputs, targets, gt = _load_dataset_dir(data_dir)
    bank = sio.load_bank(checkpoint)
    section = {"eval": ev, "dataset": manifest["provenance"], "checkpoint": str(Path(checkpoint).name)}
    meta = _meta(section, "eval")
    lap = build_laplacian(graph, manifest["kind"])
    if not np.isclose(bank.lambda_max, lap.lambda_max, rtol=1e-12, atol=0.0):
        warnings.warn(
            f"checkpoint lambda_max {bank.lambda_max:g} differs from the dataset's {lap.lambda_max:g}; "
            "centers are transported at fixed fractions of lambda_max",
            SpectrumRangeWarning,
            stacklevel=2,
        )
        bank = zero_shot_bank(bank, lap.lambda_max)
    decomp = lap._decomposition
    metrics = {"mode": ev["mode"], "n": graph.num_nodes, "lambda_max": lap.lambda_max}
    if ev["mode"] == "exact":
        if decomp is None:
            raise CapabilityError("exact mode needs an eigendecomposition; use --mode chebyshev")
        yhat = apply_exact(decomp, eval_bank(bank, decomp.eigenvalues), inputs)
    else:
        f = project_chebyshev(lambda lam: eval_bank(bank, lam), lap.lambda_max, int(ev["degree"]),
                              damping=ev["damping"])
        yhat = apply_chebyshev(f, lap, inputs)
        metrics.update(degree=f.degree, damping=f.damping, matvecs_per_signal=f.degree)
        sio.write_json(out / "chebyshev_filter.json", {**sio.filter_to_dict(f), "provenance": meta})
    metrics["mse"] = mse(yhat, targets)
    if decomp is not None:
        lam = decomp.eigenvalues
        metrics["e_spec"] = spectral_discrepancy(eval_bank(bank, lam), gt(lam))
    else:
        metrics["e_spec"] = None
    if not np.isfinite(metrics["mse"]):
        raise NumericError("evaluation produced a non-finite MSE")
    metrics["provenance"] = meta
    out.mkdir(parents=True, exist_ok=True)
    sio.write_json(out / "metrics.json", metrics)
    if graph.num_nodes <= DENSE_THRESHOLD:
        sio.write_response_csv(out / "response.csv", bank, meta)
    log.info("eval %s: mse=%.6g", ev["mode"], metrics["mse"])


def _transfer_trials(cfg):
    tr = cfg["transfer"]
    pretrain = TrainingConfig.from_dict({**cfg["training"], **tr["pretrain"]})
    adapt = TrainingConfig.from_dict({**cfg["training"], **tr["adapt"]})
    seeds = range(int(tr["first_seed"]), int(tr["first_seed"]) + int(tr["num_seeds"]))
    return structure_sweep(
        seeds,
        targets=tuple(tr["targets"]),
        K=int(tr["k"]),
        num_target=int(tr["num_target"]),
        num_source=int(tr["num_source"]),
        source_family=tr["source_family"],
        regimes=tuple(tr["regimes"]),
        kind=tr["kind"],
        pretrain=pretrain,
        adapt=adapt,
        num_peaks=int(tr["num_peaks"]),
    )


TRIAL_COLUMNS = (
    "label", "source_family", "target_family", "source_regime", "target_regime",
    "structure_relation", "signal_relation", "K", "num_target_signals", "steps",
    "mse_source", "mse_before", "mse_after", "mse_scratch", "imp", "imp_train", "delta_t",
    "spectral_distance", "degree_correlation", "clustering_similarity", "path_length_similarity",
    "density_similarity", "signal_correlation", "spectral_similarity", "moment_similarity",
    "feature_flags", "baseline_hash_source", "baseline_hash_adapted",
)


def cmd_transfer(cfg, out, jobs=1, verify_freeze=False):
    section = {"training": cfg["training"], "transfer": cfg["transfer"]}
    meta = _meta(section, "transfer")
    verify_freeze = verify_freeze or bool(cfg["transfer"]["verify_freeze"])
    trials = _transfer_trials(cfg)
    rows, summary = run_transfer_experiment(trials, jobs=jobs)
    out.mkdir(parents=True, exist_ok=True)
    sio.write_json(out / "trials.json", {"trials": [t.to_dict() for t in trials], "provenance": meta})
    sio.write_table_csv(out / "trials.csv", rows, TRIAL_COLUMNS, meta)
    sio.write_json(out / "summary.json", {"classes": summary["classes"], "num_trials": summary["num_trials"],
                                          "provenance": meta})
    sio.write_json(out / "correlations.json", {"correlations": summary["correlations"],
                                               "target": "class-normalized improvement", "provenance": meta})
    if verify_freeze:
        checks = [{"label": r["label"], "target_family": r["target_family"],
                   "baseline_hash_source": r["baseline_hash_source"],
                   "baseline_hash_adapted": r["baseline_hash_adapted"],
                   "equal": r["baseline_hash_source"] == r["baseline_hash_adapted"]} for r in rows]
        ok = all(c["equal"] for c in checks)
        sio.write_json(out / "freeze_check.json", {"all_equal": ok, "trials": checks, "provenance": meta})
        log.info("freeze check: baseline hashes %s", "identical" if ok else "DIFFER")
        if not ok:
            raise NumericError("baseline parameters changed during adaptation")
    for name, c in summary["classes"].items():
        log.info("%s: n=%d mean Imp=%.4g", name, c["count"], c["mean_imp"])


# -- entry point --------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="spectral-shaping", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--out", type=Path, default=None, help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    common.add_argument("--jobs", type=int, default=None, help="worker processes for transfer sweeps")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. training.epochs=100")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="sample a graph, signals and targets")
    f = sub.add_parser("fit", parents=[common], help="fit a shaped bank on a generated dataset")
    f.add_argument("--data", type=Path, required=True, help="dataset directory from 'generate'")
    f.add_argument("--k", type=int, default=None, help="number of shaping components")
    t = sub.add_parser("transfer", parents=[common], help="run a source-to-target transfer sweep")
    t.add_argument("--verify-freeze", action="store_true", help="check baseline hashes before/after adaptation")
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--mode", choices=("exact", "chebyshev"), default=None)
    e.add_argument("--degree", type=int, default=None)
    e.add_argument("--damping", choices=("none", "jackson"), default=None)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        overrides = list(args.overrides)
        if args.command == "fit" and args.k is not None:
            overrides.append(f"fit.k={args.k}")
        if args.command == "eval":
            for key in ("mode", "degree", "damping"):
                if getattr(args, key) is not None:
                    overrides.append(f"eval.{key}={getattr(args, key)}")
        cfg = load_config(args.config, overrides, args.seed)
        jobs = 1 if args.jobs is None else args.jobs
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = args.out if args.out is not None else Path("out")
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            if args.command == "generate":
                cmd_generate(cfg, out)
            elif args.command == "fit":
                cmd_fit(cfg, out, args.data)
            elif args.command == "transfer":
                cmd_transfer(cfg, out, jobs, args.verify_freeze)
            else:
                cmd_eval(cfg, out, args.checkpoint, args.data)
    except (ConfigError, ParameterError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (NumericError, DegenerateInputError, ContractError, CapabilityError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
