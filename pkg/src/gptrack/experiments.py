"""Seeded Monte Carlo experiments comparing the learned tracker with its baselines.

Every realization draws its truth, measurements and filter randomness from
``derive_seed(seed, experiment, "run", r)``, so results do not depend on the
number of workers or the order in which runs finish.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from gptrack import baselines, kinematics as kin, metrics, nsim, pf
from gptrack.exceptions import ConfigError
from gptrack.kinematics import KinematicState, ScenarioSpec
from gptrack.mtt import MttConfig, track_mtt
from gptrack.rng import derive_seed

log = logging.getLogger(__name__)

EXPERIMENTS = ("s1", "s2", "robustness", "mtt")
TURN_RATES_DEG = (5.0, 10.0, 15.0, 20.0, 30.0)

S1_TRAIN_START = KinematicState(0.0, 10.0, kin.DEFAULT_SPEED, 0.0)
S1_TEST_START = KinematicState(-300.0, 10.0, kin.DEFAULT_SPEED, 0.0)
S2_TRAIN_START = KinematicState(0.0, 10.0, kin.DEFAULT_SPEED, 0.0)
S2_TEST_START = KinematicState(-300.0, 1000.0, kin.DEFAULT_SPEED, 0.0)
MTT_STARTS = (
    KinematicState(-200.0, 1000.0, kin.DEFAULT_SPEED, 0.0),
    KinematicState(200.0, 1000.0, kin.DEFAULT_SPEED, math.pi),
    KinematicState(0.0, 1300.0, kin.DEFAULT_SPEED, -math.pi / 2),
)
S2_REGION = (-20000.0, 20000.0, -20000.0, 20000.0)
MTT_REGION = (-2000.0, 2000.0, 0.0, 3000.0)


@dataclass
class ExperimentConfig:
    """Knobs shared by all experiments; ``None`` picks the experiment's own default."""

    runs: int | None = None
    seed: int = 0
    M: int | None = None
    T: int | None = None
    sigma_r: float = kin.DEFAULT_SIGMA_R
    sigma_bearing: float = kin.DEFAULT_SIGMA_BEARING
    q: float = kin.DEFAULT_Q
    proposal: str = "predictive"
    noise_vars: list | None = None
    shared_hyperparameters: bool = True
    n_train_s1: int = 20
    n_train_s2: int = 1000
    p_d: float = 0.9
    lambda_fa: float = 2.0
    missed_detection: bool = False
    scaled_clutter: bool = True
    gospa_c: float = 10.0
    gospa_alpha: float = 2.0
    gospa_p: float = 2.0
    turn_rates_deg: list = field(default_factory=lambda: list(TURN_RATES_DEG))
    workers: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.runs is not None and self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.M is not None and self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.T is not None and self.T < 2:
            raise ConfigError("T must be >= 2")
        if min(self.sigma_r, self.sigma_bearing, self.q) < 0:
            raise ConfigError("noise parameters must be >= 0")
        if self.proposal not in ("latent", "predictive"):
            raise ConfigError("proposal must be 'latent' or 'predictive'")
        if min(self.n_train_s1, self.n_train_s2) < 3:
            raise ConfigError("training trajectories need at least 3 positions")
        if not 0 < self.p_d <= 1 or self.lambda_fa < 0:
            raise ConfigError("need 0 < p_d <= 1 and lambda_fa >= 0")
        try:
            metrics.GospaParams(self.gospa_c, self.gospa_alpha, self.gospa_p)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def gospa(self) -> metrics.GospaParams:
        return metrics.GospaParams(self.gospa_c, self.gospa_alpha, self.gospa_p)

    def pf_config(self, seed: int, M: int) -> pf.PfConfig:
        return pf.PfConfig(M=M, q_xi=self.q, q_eta=self.q, sigma_r=self.sigma_r,
                           sigma_bearing=self.sigma_bearing, proposal=self.proposal, seed=seed)

    def hp_grid(self):
        return nsim.default_grid(self.noise_vars if self.noise_vars is not None else self.q)

    def noise(self) -> dict:
        return {"q_xi": self.q, "q_eta": self.q, "sigma_r": self.sigma_r, "sigma_bearing": self.sigma_bearing}


def n_workers(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("GPTRACK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"GPTRACK_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _map(fn, jobs, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, *zip(*jobs)))


# --- scenario factories -----------------------------------------------------

def s1_train_spec(cfg: ExperimentConfig, seed: int) -> ScenarioSpec:
    return ScenarioSpec("S1", T=cfg.n_train_s1, initial_states=[S1_TRAIN_START],
                        region=kin.TRAIN_REGION_S1, seed=seed, **cfg.noise())


def s1_test_spec(cfg: ExperimentConfig, seed: int, turn_rate_deg: float = 15.0, scenario: str = "S1") -> ScenarioSpec:
    return ScenarioSpec(scenario, T=cfg.T or 100, initial_states=[S1_TEST_START], turn_rate_deg=turn_rate_deg,
                        region=kin.TEST_REGION_S1, seed=seed, **cfg.noise())


def s2_train_spec(cfg: ExperimentConfig, seed: int) -> ScenarioSpec:
    return ScenarioSpec("S2", T=cfg.n_train_s2, initial_states=[S2_TRAIN_START], region=S2_REGION,
                        seed=seed, **cfg.noise())


def s2_test_spec(cfg: ExperimentConfig, seed: int) -> ScenarioSpec:
    return ScenarioSpec("S2", T=cfg.T or 100, initial_states=[S2_TEST_START], region=S2_REGION,
                        seed=seed, **cfg.noise())


def mtt_spec(cfg: ExperimentConfig, seed: int) -> ScenarioSpec:
    return ScenarioSpec("S2", T=cfg.T or 50, initial_states=list(MTT_STARTS), region=MTT_REGION,
                        p_d=cfg.p_d, lambda_fa=cfg.lambda_fa, seed=seed, **cfg.noise())


def train_model(spec: ScenarioSpec, cfg: ExperimentConfig, name: str) -> nsim.NsimModel:
    truth = kin.generate_truth(spec)
    return nsim.train_nsim(
        [truth[k, :, :2] for k in range(truth.shape[0])], cfg.hp_grid(),
        shared=cfg.shared_hyperparameters,
        metadata={"scenario": spec.scenario, "model": name, "N": spec.T, "dt": spec.dt, "seed": spec.seed},
    )


def _gp_prior(row) -> np.ndarray:
    return np.array([row[0], row[1], row[2] * math.cos(row[3]), row[2] * math.sin(row[3])])


# --- single realizations (module level so worker processes can import them) --

def _stt_run(spec: ScenarioSpec, cfg: ExperimentConfig, model, filters: tuple, seed: int) -> dict:
    truth = kin.generate_truth(spec)
    sets = kin.simulate_measurements(truth, spec)
    pcfg = cfg.pf_config(seed, cfg.M or 200)
    row0 = truth[0, 0]
    out = {}
    for name in filters:
        if name == "gp":
            res = pf.track_stt(model, sets, pcfg, prior=_gp_prior(row0))
        elif name == "oracle":
            res = baselines.track_oracle_pf(truth[0], sets, pcfg)
        elif name == "imm2":
            res = baselines.track_imm_pf(baselines.imm2_config(spec.turn_rate_deg), sets, pcfg, row0)
        elif name == "imm9":
            res = baselines.track_imm_pf(baselines.imm9_config(seed), sets, pcfg, row0)
        else:
            raise ConfigError(f"unknown filter {name!r}")
        out[name] = metrics.squared_errors(truth[0], res.estimates[:, 0])
    return out


def _mtt_run(spec: ScenarioSpec, cfg: ExperimentConfig, model, seed: int) -> dict:
    truth = kin.generate_truth(spec)
    sets = kin.simulate_measurements(truth, spec)
    M = cfg.M or 500
    mcfg = MttConfig(K=spec.K, M=M, p_d=spec.p_d, lambda_fa=spec.lambda_fa, q_xi=cfg.q, q_eta=cfg.q,
                     sigma_r=cfg.sigma_r, sigma_bearing=cfg.sigma_bearing, proposal=cfg.proposal,
                     missed_detection=cfg.missed_detection,
                     clutter_density=kin.clutter_density(spec.region) if cfg.scaled_clutter else 1.0,
                     seed=seed)
    gp = track_mtt(model, sets, mcfg, [_gp_prior(truth[k, 0]) for k in range(spec.K)])
    pcfg = cfg.pf_config(seed, M)
    orc = np.stack([baselines.track_oracle_pf(truth[k], sets, pcfg, k=k, key=f"oracle/{k}").estimates[:, 0]
                    for k in range(spec.K)], axis=1)
    imm9 = baselines.imm9_config(seed)
    imm = np.stack([baselines.track_imm_pf(imm9, sets, pcfg, truth[k, 0], k=k, key=f"imm/{k}").estimates[:, 0]
                    for k in range(spec.K)], axis=1)
    truth_tk = np.swapaxes(truth[:, :, :2], 0, 1)
    gospa = {name: metrics.gospa_trace(truth_tk, est, cfg.gospa)
             for name, est in (("gp-bp", gp.estimates), ("oracle", orc), ("imm9", imm))}
    return {"gospa": gospa, "bp_nonconverged": int(np.sum(~gp.bp_converged)),
            "degenerate_fallbacks": int(gp.diagnostics["degenerate_fallbacks"])}


# --- aggregation --------------------------------------------------------------

def _pool_stt(results: list[dict]) -> dict:
    names = results[0].keys()
    return {
        "rmse": {n: float(math.sqrt(np.mean([r[n] for r in results]))) for n in names},
        "per_run_rmse": {n: [float(math.sqrt(np.mean(r[n]))) for r in results] for n in names},
    }


def _stt_batch(cfg, name, spec_fn, model, filters, runs, workers) -> dict:
    seeds = [derive_seed(cfg.seed, name, "run", r) for r in range(runs)]
    jobs = [(spec_fn(s), cfg, model, tuple(filters), s) for s in seeds]
    out = _pool_stt(_map(_stt_run, jobs, workers))
    out["seeds"] = seeds
    return out


def run_s1(cfg: ExperimentConfig) -> dict:
    runs, workers = cfg.runs or 50, n_workers(cfg.workers)
    train = s1_train_spec(cfg, derive_seed(cfg.seed, "s1", "train"))
    model = train_model(train, cfg, "GP_S1")
    res = _stt_batch(cfg, "s1", lambda s: s1_test_spec(cfg, s), model, ("gp", "oracle", "imm2"), runs, workers)
    res.update(experiment="s1", runs=runs, train_seed=train.seed, hyperparameters=model.gp_xi.hp.to_dict(),
               n_pairs=model.n_pairs)
    return res


def run_s2(cfg: ExperimentConfig) -> dict:
    runs, workers = cfg.runs or 50, n_workers(cfg.workers)
    train = s2_train_spec(cfg, derive_seed(cfg.seed, "s2", "train"))
    model = train_model(train, cfg, "GP_S2")
    res = _stt_batch(cfg, "s2", lambda s: s2_test_spec(cfg, s), model, ("gp", "oracle", "imm9"), runs, workers)
    res.update(experiment="s2", runs=runs, train_seed=train.seed, hyperparameters=model.gp_xi.hp.to_dict(),
               n_pairs=model.n_pairs)
    return res


def run_robustness(cfg: ExperimentConfig, parts=("turn_rate", "cross_scenario")) -> dict:
    """Turn-rate sweep of GP_S1 and GP_S2 applied to S1 and S3."""
    runs, workers = cfg.runs or 50, n_workers(cfg.workers)
    out = {"experiment": "robustness", "runs": runs}
    if "turn_rate" in parts:
        model = train_model(s1_train_spec(cfg, derive_seed(cfg.seed, "s1", "train")), cfg, "GP_S1")
        sweep = {}
        for rate in cfg.turn_rates_deg:
            res = _stt_batch(cfg, f"robustness/turn{rate:g}",
                             lambda s, rate=rate: s1_test_spec(cfg, s, turn_rate_deg=rate), model, ("gp",),
                             runs, workers)
            sweep[f"{rate:g}"] = res["rmse"]["gp"]
        out["turn_rate"] = sweep
    if "cross_scenario" in parts:
        model = train_model(s2_train_spec(cfg, derive_seed(cfg.seed, "s2", "train")), cfg, "GP_S2")
        cross = {}
        for scen in ("S1", "S3"):
            res = _stt_batch(cfg, f"robustness/{scen}",
                             lambda s, scen=scen: s1_test_spec(cfg, s, scenario=scen), model,
                             ("gp", "oracle", "imm9"), runs, workers)
            cross[scen] = res["rmse"]
        out["cross_scenario"] = cross
    return out


def run_mtt(cfg: ExperimentConfig) -> dict:
    runs, workers = cfg.runs or 25, n_workers(cfg.workers)
    model = train_model(s2_train_spec(cfg, derive_seed(cfg.seed, "s2", "train")), cfg, "GP_S2")
    seeds = [derive_seed(cfg.seed, "mtt", "run", r) for r in range(runs)]
    jobs = [(mtt_spec(cfg, s), cfg, model, s) for s in seeds]
    results = _map(_mtt_run, jobs, workers)
    names = results[0]["gospa"].keys()
    trace = {n: np.mean([r["gospa"][n] for r in results], axis=0) for n in names}
    return {
        "experiment": "mtt",
        "runs": runs,
        "seeds": seeds,
        "gospa_params": cfg.gospa.to_dict(),
        "mean_gospa": {n: float(np.mean(trace[n])) for n in names},
        "gospa_trace": {n: trace[n].tolist() for n in names},
        "bp_nonconverged_steps": int(sum(r["bp_nonconverged"] for r in results)),
        "degenerate_fallbacks": int(sum(r["degenerate_fallbacks"] for r in results)),
    }


RUNNERS = {"s1": run_s1, "s2": run_s2, "robustness": run_robustness, "mtt": run_mtt}


def run_experiment(name: str, cfg: ExperimentConfig) -> dict:
    if name not in RUNNERS:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    res = RUNNERS[name](cfg)
    res["config"] = cfg.to_dict()
    return res


def format_table(res: dict) -> str:
    """Markdown comparison table for an experiment result."""
    name = res["experiment"]
    if name in ("s1", "s2"):
        cols = list(res["rmse"])
        return _md(["", *cols], [[f"RMSE {name.upper()}", *(f"{res['rmse'][c]:.4f}" for c in cols)]])
    if name == "mtt":
        cols = list(res["mean_gospa"])
        return _md(["", *cols], [["mean GOSPA", *(f"{res['mean_gospa'][c]:.4f}" for c in cols)]])
    parts = []
    if "turn_rate" in res:
        rates = list(res["turn_rate"])
        parts.append(_md(["turn rate (deg/s)", *rates],
                         [["RMSE GP_S1", *(f"{res['turn_rate'][r]:.4f}" for r in rates)]]))
    if "cross_scenario" in res:
        scen = list(res["cross_scenario"])
        cols = list(res["cross_scenario"][scen[0]])
        parts.append(_md(["scenario", *cols],
                         [[s, *(f"{res['cross_scenario'][s][c]:.4f}" for c in cols)] for s in scen]))
    return "\n".join(parts)


def _md(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"
