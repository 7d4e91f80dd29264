"""Command-line entry point: simulate, train, track, evaluate, experiment.

Every command computes all of its results in memory before creating the
output directory, so a failing command leaves no partial artifacts.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from gptrack import __version__, baselines, experiments as ex, gpr, io, kinematics as kin, metrics, nsim, pf
from gptrack.exceptions import (
    ConfigError,
    DataError,
    DegenerateWeightsError,
    IllConditionedError,
    InstanceTooLargeError,
    InvalidStateError,
)
from gptrack.kinematics import ScenarioSpec, to_cartesian
from gptrack.mtt import MttConfig, track_mtt
from gptrack.rng import derive_seed

log = logging.getLogger("gptrack")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FILTERS = ("gp", "oracle", "imm2", "imm9")
PRESETS = ("s1", "s2", "s3", "mtt")


class Outputs:
    """Artifacts staged in memory and written together at the end."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.items = []

    def add(self, name, writer, *args):
        self.items.append((name, writer, args))

    def names(self) -> list[str]:
        return [n for n, _, _ in self.items] + ["manifest.json"]

    def commit(self, manifest: dict):
        self.dir.mkdir(parents=True, exist_ok=True)
        for name, writer, args in self.items:
            writer(self.dir / name, *args)
        io.write_json(self.dir / "manifest.json", manifest)


def _manifest(command, config, seeds, inputs, outputs: Outputs, started) -> dict:
    return {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": [str(p) for p in inputs],
        "outputs": outputs.names(),
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 3),
    }


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = io.read_json(p)
    except DataError as exc:
        raise ConfigError(str(exc)) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top-level JSON value must be an object")
    return data


def _require(path, what):
    if path is None:
        raise DataError(f"{what} required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


# --- simulate -------------------------------------------------------------------

def _preset_specs(name: str, seed: int) -> dict:
    cfg = ex.ExperimentConfig()
    if name == "s1":
        return {"train": ex.s1_train_spec(cfg, derive_seed(seed, "train")),
                "test": ex.s1_test_spec(cfg, derive_seed(seed, "test"))}
    if name == "s2":
        return {"train": ex.s2_train_spec(cfg, derive_seed(seed, "train")),
                "test": ex.s2_test_spec(cfg, derive_seed(seed, "test"))}
    if name == "s3":
        return {"test": ex.s1_test_spec(cfg, derive_seed(seed, "test"), scenario="S3")}
    return {"test": ex.mtt_spec(cfg, derive_seed(seed, "test"))}


def _spec_from(data: dict, seed_override, label: str) -> ScenarioSpec:
    data = dict(data)
    if seed_override is not None:
        data["seed"] = derive_seed(seed_override, label) if label else seed_override
    return ScenarioSpec.from_dict(data)


def resolve_scenarios(config, seed) -> dict:
    """``{label: ScenarioSpec}`` from a preset name or a JSON config file."""
    if config in PRESETS:
        return _preset_specs(config, 0 if seed is None else seed)
    data = _load_config(config)
    if "scenario" in data:
        return {"": _spec_from(data, seed, "")}
    sections = {k: v for k, v in data.items() if k in ("train", "test")}
    extra = set(data) - {"train", "test"}
    if not sections or extra:
        raise ConfigError("config must be a scenario object or hold 'train'/'test' scenario sections")
    return {label: _spec_from(sec, seed, label) for label, sec in sections.items()}


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    if args.config is None:
        raise ConfigError("--config is required (a JSON file or one of " + ", ".join(PRESETS) + ")")
    specs = resolve_scenarios(args.config, args.seed)
    out = Outputs(args.out)
    for label, spec in specs.items():
        truth = kin.generate_truth(spec)
        sets = kin.simulate_measurements(truth, spec)
        prefix = f"{label}_" if label else ""
        out.add(f"{prefix}trajectory.csv", io.write_trajectory_csv, truth)
        out.add(f"{prefix}measurements.csv", io.write_measurements_csv, sets)
        log.info("%s: %s, T=%d, K=%d", label or "scenario", spec.scenario, spec.T, spec.K)
    config = {label or "scenario": s.to_dict() for label, s in specs.items()}
    seeds = {label or "scenario": s.seed for label, s in specs.items()}
    out.commit(_manifest("simulate", config, seeds, [args.config], out, started))
    return EXIT_OK


# --- train ------------------------------------------------------------------------

def _hp_grid(cfg: dict):
    allowed = {"length_scales", "signal_vars", "noise_vars", "shared"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown training fields: {sorted(unknown)}")
    kwargs = {k: cfg[k] for k in ("length_scales", "signal_vars") if k in cfg}
    noise = cfg.get("noise_vars", [kin.DEFAULT_Q])
    try:
        grid = gpr.hyperparameter_grid(noise_vars=noise, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid hyperparameter grid: {exc}") from exc
    return grid, bool(cfg.get("shared", True))


def cmd_train(args) -> int:
    started = time.perf_counter()
    cfg = _load_config(args.config)
    grid, shared = _hp_grid(cfg)
    path = _require(args.trajectory, "trajectory file")
    truth = io.read_trajectory_csv(path)
    targets = [args.target] if args.target is not None else list(range(truth.shape[0]))
    if any(k >= truth.shape[0] or k < 0 for k in targets):
        raise DataError(f"trajectory has {truth.shape[0]} target(s)")
    tracks = [truth[k, :, :2] for k in targets]
    if any(t.shape[0] < 3 for t in tracks):
        raise DataError("training needs at least 3 trajectory rows per target")
    model = nsim.train_nsim(tracks, grid, shared=shared,
                            metadata={"source": path.name, "targets": targets, "N": int(truth.shape[1])})
    log.info("selected hyperparameters: xi %s, eta %s (%d pairs)", model.gp_xi.hp.to_dict(),
             model.gp_eta.hp.to_dict(), model.n_pairs)
    out = Outputs(args.out)
    out.add("model.json", lambda p, m: m.save(p), model)
    out.commit(_manifest("train", cfg, {}, [path], out, started))
    return EXIT_OK


# --- track ------------------------------------------------------------------------

_PF_FIELDS = {f.name for f in fields(pf.PfConfig)}
_MTT_FIELDS = {f.name for f in fields(MttConfig)} - {"K", "target_keys", "record_marginals"}


def _track_config(data: dict, seed) -> tuple[dict, float | None]:
    data = dict(data)
    region = data.pop("region", None)
    unknown = set(data) - _PF_FIELDS - _MTT_FIELDS
    if unknown:
        raise ConfigError(f"unknown tracking fields: {sorted(unknown)}")
    if seed is not None:
        data["seed"] = seed
    if region is not None:
        try:
            density = kin.clutter_density(region)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid region: {exc}") from exc
        data.setdefault("clutter_density", density)
    return data, region


def _pf_config(data: dict) -> pf.PfConfig:
    try:
        return pf.PfConfig(**{k: v for k, v in data.items() if k in _PF_FIELDS})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _prior_row_from_fixes(zs) -> np.ndarray:
    fixes = [z[0] for z in zs if z.shape[0]]
    if len(fixes) < 2 or zs[0].shape[0] == 0 or zs[1].shape[0] == 0:
        raise DataError("without truth the first two steps must carry detections")
    p = to_cartesian(np.asarray(fixes[:2]))
    d = p[1] - p[0]
    return np.array([p[0, 0], p[0, 1], max(math.hypot(*d), baselines.MIN_SPEED), math.atan2(d[1], d[0])])


def _track_one(name, model, sets, truth, pcfg, k, K):
    suffix = f"/{k}" if K > 1 else ""
    if name == "gp":
        if truth is not None:
            row = truth[k, 0]
            prior = np.array([row[0], row[1], row[2] * math.cos(row[3]), row[2] * math.sin(row[3])])
            return pf.track_stt(model, sets, pcfg, prior=prior)
        return pf.track_stt(model, sets, pcfg)
    if name == "oracle":
        return baselines.track_oracle_pf(truth[k], sets, pcfg, k=k, key="oracle" + suffix)
    row = truth[k, 0] if truth is not None else _prior_row_from_fixes(pf.target_measurements(sets, k))
    imm = baselines.imm2_config() if name == "imm2" else baselines.imm9_config(pcfg.seed)
    return baselines.track_imm_pf(imm, sets, pcfg, row, k=k, key="imm" + suffix)


def cmd_track(args) -> int:
    started = time.perf_counter()
    if args.filter not in FILTERS:
        raise ConfigError(f"--filter must be one of {FILTERS}")
    cfg_data, region = _track_config(_load_config(args.config), args.seed)
    pcfg = _pf_config(cfg_data)
    model = None
    if args.filter == "gp":
        model = nsim.NsimModel.load(_require(args.model, "model file (--model) for the gp filter"))
    truth = io.read_trajectory_csv(_require(args.truth, "truth trajectory (--truth)")) if args.truth else None
    if args.filter == "oracle" and truth is None:
        raise DataError("the oracle filter needs the truth trajectory (--truth) for its accelerations")
    meas_path = _require(args.measurements, "measurement file")
    sets = io.read_measurements_csv(meas_path, T=truth.shape[1] if truth is not None else None)
    diagnostics = {"filter": args.filter, "mode": args.mode}
    assoc_records = None
    if args.mode == "mtt":
        if truth is None:
            raise DataError("multi-target tracking initializes from the truth initial states (--truth)")
        K = truth.shape[0]
        if args.filter == "gp":
            try:
                mcfg = MttConfig(K=K, record_marginals=True,
                                 **{k: v for k, v in cfg_data.items() if k in _MTT_FIELDS})
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
            priors = [np.array([r[0], r[1], r[2] * math.cos(r[3]), r[2] * math.sin(r[3])]) for r in truth[:, 0]]
            res = track_mtt(model, sets, mcfg, priors)
            assoc_records = res.diagnostics.pop("marginals")
            diagnostics.update(bp_converged=res.bp_converged, bp_iterations=res.bp_iterations,
                               degenerate_fallbacks=res.diagnostics["degenerate_fallbacks"])
        else:
            parts = [_track_one(args.filter, model, sets, truth, pcfg, k, K) for k in range(K)]
            res = pf.TrackOutput(np.concatenate([p.estimates for p in parts], axis=1),
                                 np.concatenate([p.ess for p in parts], axis=1), filter=parts[0].filter,
                                 respread=sum(p.respread for p in parts))
    else:
        if truth is not None and truth.shape[0] != 1:
            raise DataError("single-target mode needs a one-target truth file; use --mode mtt")
        res = _track_one(args.filter, model, sets, truth, pcfg, 0, 1)
    diagnostics.update(ess=res.ess, respread=res.respread, T=res.T, K=res.K)
    out = Outputs(args.out)
    out.add("estimates.csv", io.write_estimates_csv, res)
    out.add("diagnostics.json", io.write_json, {**diagnostics, "manifest": "manifest.json"})
    if assoc_records is not None:
        out.add("association.csv", io.write_association_csv, assoc_records)
    inputs = [meas_path] + [p for p in (args.model, args.truth) if p]
    config = {"filter": args.filter, "mode": args.mode, **cfg_data}
    if region is not None:
        config["region"] = region
    out.commit(_manifest("track", config, {"seed": pcfg.seed}, inputs, out, started))
    return EXIT_OK


# --- evaluate ---------------------------------------------------------------------

def _gospa_params(data: dict) -> metrics.GospaParams:
    unknown = set(data) - {"c", "alpha", "p"}
    if unknown:
        raise ConfigError(f"unknown GOSPA fields: {sorted(unknown)}")
    try:
        return metrics.GospaParams(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    if args.metric not in ("rmse", "gospa"):
        raise ConfigError("--metric must be rmse or gospa")
    params = _gospa_params(_load_config(args.config)) if args.metric == "gospa" else None
    if len(args.files) % 2:
        raise ConfigError("evaluate takes TRUTH EST pairs")
    per_step, pooled_se, filters, inputs = [], [], set(), []
    for truth_path, est_path in zip(args.files[::2], args.files[1::2]):
        truth = io.read_trajectory_csv(_require(truth_path, "truth file"))
        est, name = io.read_estimates_csv(_require(est_path, "estimates file"))
        inputs += [truth_path, est_path]
        filters.add(name)
        truth_tk = np.swapaxes(truth[:, :, :2], 0, 1)
        if truth_tk.shape[0] != est.shape[0]:
            raise DataError(f"misaligned time indices: truth has T={truth_tk.shape[0]}, estimates T={est.shape[0]}")
        if args.metric == "rmse":
            if truth_tk.shape[1] != est.shape[1]:
                raise DataError(f"target count differs: truth K={truth_tk.shape[1]}, estimates K={est.shape[1]}")
            se = metrics.squared_errors(truth_tk, est)
            pooled_se.append(se)
            per_step.append(np.mean(se, axis=1))
        else:
            per_step.append(metrics.gospa_trace(truth_tk, est, params))
    T = {len(s) for s in per_step}
    if len(T) != 1:
        raise DataError("all evaluated pairs must share the same number of steps")
    report = {"metric": args.metric, "n_pairs": len(per_step), "filters": sorted(filters), "manifest": "manifest.json"}
    if args.metric == "rmse":
        report["rmse"] = float(math.sqrt(np.mean(pooled_se)))
        series = np.sqrt(np.mean(per_step, axis=0))
    else:
        report["gospa_params"] = params.to_dict()
        series = np.mean(per_step, axis=0)
        report["mean_gospa"] = float(np.mean(series))
    out = Outputs(args.out)
    out.add("report.json", io.write_json, report)
    out.add("per_step.csv", io.write_series_csv, [args.metric], [series])
    out.commit(_manifest("evaluate", {"metric": args.metric, "gospa": params.to_dict() if params else None},
                         {}, inputs, out, started))
    return EXIT_OK


# --- experiment ---------------------------------------------------------------------

def cmd_experiment(args) -> int:
    started = time.perf_counter()
    if args.name not in ex.EXPERIMENTS:
        raise ConfigError(f"unknown experiment {args.name!r}; expected one of {ex.EXPERIMENTS}")
    data = _load_config(args.config)
    if args.runs is not None:
        data["runs"] = args.runs
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = ex.ExperimentConfig.from_dict(data)
    res = ex.run_experiment(args.name, cfg)
    out = Outputs(args.out)
    out.add("results.json", io.write_json, {**res, "manifest": "manifest.json"})
    out.add("table.md", lambda p, s: Path(p).write_text(s, encoding="utf-8"), ex.format_table(res))
    if args.name == "mtt":
        names = list(res["gospa_trace"])
        out.add("gospa_trace.csv", io.write_series_csv, names, [res["gospa_trace"][n] for n in names])
    if not args.quiet:
        print(ex.format_table(res), end="")
    out.commit(_manifest("experiment", cfg.to_dict(), {"seed": cfg.seed}, [args.config] if args.config else [],
                         out, started))
    return EXIT_OK


# --- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gptrack", description="Learned GP motion models for target tracking.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="root seed (overrides the config)")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--quiet", action="store_true", help="only report errors")
        return sp

    s = common(sub.add_parser("simulate", help="generate trajectories and measurements"))
    s.set_defaults(func=cmd_simulate)
    s.epilog = "The config may also be a preset name: " + ", ".join(PRESETS)

    s = common(sub.add_parser("train", help="fit the velocity-delta GP model"))
    s.add_argument("trajectory", help="trajectory CSV")
    s.add_argument("--target", type=int, help="train on one target only")
    s.set_defaults(func=cmd_train)

    s = common(sub.add_parser("track", help="run a tracker over a measurement file"))
    s.add_argument("measurements", help="measurement CSV")
    s.add_argument("--filter", default="gp", help="gp, oracle, imm2 or imm9")
    s.add_argument("--mode", choices=("stt", "mtt"), default="stt")
    s.add_argument("--model", help="model JSON (gp filter)")
    s.add_argument("--truth", help="truth trajectory CSV (initial states; oracle accelerations)")
    s.set_defaults(func=cmd_track)

    s = common(sub.add_parser("evaluate", help="score estimates against truth"))
    s.add_argument("files", nargs="+", metavar="TRUTH EST", help="one or more truth/estimate CSV pairs")
    s.add_argument("--metric", default="rmse", help="rmse or gospa")
    s.set_defaults(func=cmd_evaluate)

    s = common(sub.add_parser("experiment", help="run a full Monte Carlo comparison"))
    s.add_argument("name", help="s1, s2, robustness or mtt")
    s.add_argument("--runs", type=int, help="Monte Carlo realizations")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IllConditionedError, DegenerateWeightsError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, InvalidStateError, InstanceTooLargeError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
