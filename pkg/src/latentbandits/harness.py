"""Experiment orchestration: offline phase, online trials, aggregation.

A JSON config fully determines a run; trial seeds derive from the base
seed plus the trial index, and every consumer (latent draw, round
construction, reward noise, policy sampling) gets its own seed stream so
adding a policy never perturbs another policy's randomness. Outputs are
deterministic byte for byte given the config.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from . import model as model_mod
from . import offline as offline_mod
from . import online as online_mod
from .errors import ValidationError

POLICY_IDS = ("linucb", "lints", "proball-ucb", "proball-ts", "local-ucb")
# "oracle" plays greedily on the true parameter; test hook, not a CLI policy.
INTERNAL_POLICY_IDS = POLICY_IDS + ("oracle",)

_SCENARIO_DEFAULTS = {
    "synthetic": {"h": 20, "t": 1000},
    "ratings": {"h": 50, "t": 200},
}


@dataclass(frozen=True)
class OfflineParams:
    n: int
    h: int
    mu: float
    delta: float
    bound_kind: str
    variant: str
    simplified_delta_off: bool
    external_delta_m: float | None = None
    external_delta_d: float | None = None


@dataclass(frozen=True)
class OnlineParams:
    t: int
    policies: tuple
    schedule: str
    tau: float
    tau_prime: float
    solver_budget: int
    arms_per_round: int
    c_mult: float


@dataclass(frozen=True)
class Paths:
    model: str | None = None
    subspace: str | None = None
    factors: str | None = None
    ratings: str | None = None
    out_dir: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    d_a: int
    d_k: int
    noise_std: float
    offline: OfflineParams
    online: OnlineParams
    trials: int
    base_seed: int
    paths: Paths
    workers: int = 1

    def digest(self):
        return hashlib.sha256(
            json.dumps(config_to_dict(self), sort_keys=True).encode()
        ).hexdigest()[:12]


def _take(doc, path, known, required=(), defaults=None):
    unknown = set(doc) - set(known)
    if unknown:
        where = f"{path}.{sorted(unknown)[0]}" if path else sorted(unknown)[0]
        raise ValidationError(f"unknown config field: {where}")
    for key in required:
        if key not in doc:
            where = f"{path}.{key}" if path else key
            raise ValidationError(f"missing config field: {where}")
    merged = dict(defaults or {})
    merged.update(doc)
    return merged


def config_from_dict(doc):
    top = _take(
        doc,
        "",
        known=("scenario", "dims", "noise_std", "offline", "online", "trials",
               "base_seed", "paths", "workers"),
        required=("scenario", "dims", "offline", "online", "trials", "base_seed"),
        defaults={"noise_std": 0.5, "paths": {}, "workers": 1},
    )
    scenario = top["scenario"]
    if scenario not in _SCENARIO_DEFAULTS:
        raise ValidationError(f"scenario must be synthetic or ratings, got {scenario!r}")
    dims = _take(top["dims"], "dims", known=("d_a", "d_k"), required=("d_a", "d_k"))
    scen = _SCENARIO_DEFAULTS[scenario]

    off = _take(
        top["offline"],
        "offline",
        known=("n", "h", "mu", "delta", "bound_kind", "variant",
               "simplified_delta_off", "external_delta_m", "external_delta_d"),
        required=("n",),
        defaults={
            "h": scen["h"],
            "mu": 1.0,
            "delta": 0.05,
            "bound_kind": "empirical_bernstein",
            "variant": "regularized",
            "simplified_delta_off": scenario == "ratings",
            "external_delta_m": None,
            "external_delta_d": None,
        },
    )
    onl = _take(
        top["online"],
        "online",
        known=("t", "policy", "policies", "schedule", "tau", "tau_prime",
               "solver_budget", "arms_per_round", "c_mult"),
        defaults={
            "t": scen["t"],
            "schedule": "practical",
            "tau": 1.0,
            "tau_prime": 0.0,
            "solver_budget": 64,
            "arms_per_round": 20,
            "c_mult": 1.0,
        },
    )
    if "policy" in onl and "policies" in onl:
        raise ValidationError("online.policy and online.policies are exclusive")
    policies = onl.get("policies", [onl.get("policy", "linucb")])
    if isinstance(policies, str):
        policies = [policies]
    for pid in policies:
        if pid not in INTERNAL_POLICY_IDS:
            raise ValidationError(f"online.policy: unknown policy id {pid!r}")

    paths = _take(
        top["paths"], "paths",
        known=("model", "subspace", "factors", "ratings", "out_dir"),
    )
    config = ExperimentConfig(
        scenario=scenario,
        d_a=int(dims["d_a"]),
        d_k=int(dims["d_k"]),
        noise_std=float(top["noise_std"]),
        offline=OfflineParams(
            n=int(off["n"]),
            h=int(off["h"]),
            mu=float(off["mu"]),
            delta=float(off["delta"]),
            bound_kind=str(off["bound_kind"]),
            variant=str(off["variant"]),
            simplified_delta_off=bool(off["simplified_delta_off"]),
            external_delta_m=None if off["external_delta_m"] is None
            else float(off["external_delta_m"]),
            external_delta_d=None if off["external_delta_d"] is None
            else float(off["external_delta_d"]),
        ),
        online=OnlineParams(
            t=int(onl["t"]),
            policies=tuple(policies),
            schedule=str(onl["schedule"]),
            tau=float(onl["tau"]),
            tau_prime=float(onl["tau_prime"]),
            solver_budget=int(onl["solver_budget"]),
            arms_per_round=int(onl["arms_per_round"]),
            c_mult=float(onl["c_mult"]),
        ),
        trials=int(top["trials"]),
        base_seed=int(top["base_seed"]),
        paths=Paths(**{k: paths.get(k) for k in ("model", "subspace", "factors", "ratings", "out_dir")}),
        workers=int(top["workers"]),
    )
    validate_config(config)
    return config


def validate_config(config):
    checks = [
        (config.d_a >= 1 and 1 <= config.d_k <= config.d_a, "dims"),
        (config.noise_std >= 0, "noise_std"),
        (config.offline.n >= 1, "offline.n"),
        (config.offline.h >= 2, "offline.h"),
        (config.offline.delta > 0 and config.offline.delta < 1, "offline.delta"),
        (config.offline.bound_kind in offline_mod.BOUND_KINDS, "offline.bound_kind"),
        (
            config.offline.bound_kind != "external"
            or (config.offline.external_delta_m is not None
                and config.offline.external_delta_d is not None),
            "offline.external_delta_m",
        ),
        (config.offline.variant in offline_mod.VARIANTS, "offline.variant"),
        (config.offline.variant != "regularized" or config.offline.mu > 0, "offline.mu"),
        (config.online.t >= 0, "online.t"),
        (config.online.schedule in ("theory", "practical"), "online.schedule"),
        (config.online.tau >= 0, "online.tau"),
        (config.online.tau_prime >= 0, "online.tau_prime"),
        (config.online.solver_budget >= 1, "online.solver_budget"),
        (config.online.arms_per_round >= 1, "online.arms_per_round"),
        (config.trials >= 1, "trials"),
        (config.workers >= 1, "workers"),
    ]
    for ok, where in checks:
        if not ok:
            raise ValidationError(f"invalid config value at {where}")


def config_to_dict(config):
    return {
        "scenario": config.scenario,
        "dims": {"d_a": config.d_a, "d_k": config.d_k},
        "noise_std": config.noise_std,
        "offline": {
            "n": config.offline.n,
            "h": config.offline.h,
            "mu": config.offline.mu,
            "delta": config.offline.delta,
            "bound_kind": config.offline.bound_kind,
            "variant": config.offline.variant,
            "simplified_delta_off": config.offline.simplified_delta_off,
            "external_delta_m": config.offline.external_delta_m,
            "external_delta_d": config.offline.external_delta_d,
        },
        "online": {
            "t": config.online.t,
            "policies": list(config.online.policies),
            "schedule": config.online.schedule,
            "tau": config.online.tau,
            "tau_prime": config.online.tau_prime,
            "solver_budget": config.online.solver_budget,
            "arms_per_round": config.online.arms_per_round,
            "c_mult": config.online.c_mult,
        },
        "trials": config.trials,
        "base_seed": config.base_seed,
        "paths": {
            "model": config.paths.model,
            "subspace": config.paths.subspace,
            "factors": config.paths.factors,
            "ratings": config.paths.ratings,
            "out_dir": config.paths.out_dir,
        },
        "workers": config.workers,
    }


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))


class SyntheticEnvironment:
    """Online environment for the synthetic scenario."""

    def __init__(self, model):
        self.model = model
        self.noise_std = model.noise_std
        self.d_a = model.d_a
        self.reward_bound = model.reward_bound

    def draw_beta(self, rng):
        return self.model.beta(model_mod.sample_theta(self.model, rng))

    def build_round(self, rng, k):
        return model_mod.ActionRound(self.model.feature_universe.draw(rng, k))

    def true_subspace(self):
        return self.model.u_star


class RatingsEnvironment:
    """Online environment backed by factorized ratings."""

    def __init__(self, factors, meta):
        self.factors = factors
        self.meta = meta
        self.noise_std = meta["noise_std"]
        self.d_a = factors.d_a
        self.reward_bound = meta["reward_bound"]

    def draw_beta(self, rng):
        user = int(rng.integers(self.factors.n_users))
        return self.factors.user_factors[user]

    def build_round(self, rng, k):
        idx = rng.choice(self.factors.n_items, size=k, replace=False)
        return model_mod.ActionRound(self.factors.item_factors[:, idx].T)

    def true_subspace(self):
        return self.meta["u_star"]


def build_environment(config):
    if config.scenario == "synthetic":
        if config.paths.model and os.path.exists(config.paths.model):
            model = model_mod.load_model(config.paths.model)
            if (model.d_a, model.d_k) != (config.d_a, config.d_k):
                raise ValidationError(
                    f"paths.model dims {model.d_a}x{model.d_k} do not match "
                    f"config dims {config.d_a}x{config.d_k}"
                )
        else:
            model = model_mod.synth_model(
                config.d_a, config.d_k, config.noise_std, seed=config.base_seed
            )
        return SyntheticEnvironment(model)
    if config.paths.factors is None:
        raise ValidationError("paths.factors is required for the ratings scenario")
    factors, meta = data_mod.load_factors(config.paths.factors)
    return RatingsEnvironment(factors, meta)


def generate_offline_dataset(config, env):
    """N logged trajectories under the uniform behavior policy."""
    policy = model_mod.UniformPolicy()
    trajectories = []
    if isinstance(env, SyntheticEnvironment):
        for n in range(config.offline.n):
            rng = model_mod.stream_rng(config.base_seed, model_mod.STREAM_OFFLINE, n)
            theta = model_mod.sample_theta(env.model, rng)
            trajectories.append(
                model_mod.sample_trajectory(env.model, theta, policy, config.offline.h, rng)
            )
        return trajectories
    factors = env.factors
    for n in range(config.offline.n):
        rng = model_mod.stream_rng(config.base_seed, model_mod.STREAM_OFFLINE, n)
        user = int(rng.integers(factors.n_users))
        beta = factors.user_factors[user]
        idx = rng.integers(factors.n_items, size=config.offline.h)
        feats = factors.item_factors[:, idx].T
        noise = model_mod.truncated_gaussian(rng, env.noise_std, config.offline.h)
        trajectories.append(
            model_mod.Trajectory(
                features=feats, rewards=feats @ beta + noise, hidden_theta=beta.copy()
            )
        )
    return trajectories


def effective_reward_bound(config, env):
    # Truncated noise keeps rewards within three deviations of the mean.
    return env.reward_bound + 3.0 * env.noise_std


def run_offline_phase(config, out_path=None):
    """Generate the logged dataset, run the subspace estimator, persist it."""
    env = build_environment(config)
    dataset = generate_offline_dataset(config, env)
    external = None
    if config.offline.bound_kind == "external":
        external = (config.offline.external_delta_m, config.offline.external_delta_d)
    estimate = offline_mod.sold(
        dataset,
        config.d_k,
        mu=config.offline.mu,
        delta=config.offline.delta,
        bound_kind=config.offline.bound_kind,
        variant=config.offline.variant,
        reward_bound=effective_reward_bound(config, env),
        external_bounds=external,
        simplified=config.offline.simplified_delta_off,
    )
    if isinstance(env, SyntheticEnvironment) and config.paths.model:
        model_mod.save_model(env.model, config.paths.model)
    target = out_path or config.paths.subspace
    if target:
        offline_mod.save_estimate(estimate, target)
    return estimate


@dataclass
class RegretLog:
    """Per-step record of one seeded online trial."""

    policy: str
    trial_seed: int
    arms: np.ndarray
    branches: list
    inst_regret: np.ndarray
    cum_regret: np.ndarray
    kappas: np.ndarray
    config_hash: str
    delta_off: float
    switch_step: int | None = None

    @property
    def t(self):
        return len(self.inst_regret)


def _make_schedule(config, env):
    return online_mod.BonusSchedule(
        reward_bound=effective_reward_bound(config, env),
        horizon=max(config.online.t, 1),
        d_a=env.d_a,
        d_k=config.d_k,
        mu=1.0,
        c_mult=config.online.c_mult,
        delta=config.offline.delta,
        tau=config.online.tau,
        tau_prime=config.online.tau_prime,
        style=config.online.schedule,
    )


def run_online_trial(config, estimate, trial_index, policy=None, env=None):
    """One seeded trial of one policy; returns its regret log."""
    if env is None:
        env = build_environment(config)
    policy = policy or config.online.policies[0]
    if policy not in INTERNAL_POLICY_IDS:
        raise ValidationError(f"unknown policy id {policy!r}")
    if estimate is not None and estimate.d_a != env.d_a:
        raise ValidationError("estimate dimension does not match the environment")

    trial_seed = config.base_seed + trial_index
    rng_theta = model_mod.stream_rng(trial_seed, model_mod.STREAM_THETA)
    rng_rounds = model_mod.stream_rng(trial_seed, model_mod.STREAM_ROUNDS)
    rng_noise = model_mod.stream_rng(trial_seed, model_mod.STREAM_NOISE)
    rng_policy = model_mod.stream_rng(trial_seed, model_mod.STREAM_POLICY)

    beta_star = env.draw_beta(rng_theta)
    schedule = _make_schedule(config, env)
    needs_projection = estimate is not None and policy not in ("linucb", "lints", "oracle")
    u_hat = estimate.u_hat if estimate is not None else None
    state = online_mod.OnlineLearnerState.fresh(env.d_a, u_hat=u_hat)

    t_steps = config.online.t
    arms = np.zeros(t_steps, dtype=np.int64)
    branches = []
    inst = np.zeros(t_steps)
    kappas = np.zeros(t_steps)
    switch_step = None

    for step in range(t_steps):
        action_round = env.build_round(rng_rounds, config.online.arms_per_round)
        kappas[step] = state.kappa
        if policy == "linucb":
            choice = online_mod.linucb_select(
                state, action_round, online_mod.alpha2(schedule, state.t)
            )
        elif policy == "lints":
            choice = online_mod.lints_select(
                state, action_round, online_mod.alpha2(schedule, state.t), rng_policy
            )
        elif policy == "proball-ucb":
            choice = online_mod.proball_select(state, estimate, action_round, schedule)
        elif policy == "proball-ts":
            choice = online_mod.proball_ts_select(
                state, estimate, action_round, schedule, rng_policy
            )
        elif policy == "local-ucb":
            choice = online_mod.local_ucb_select(
                state, estimate, action_round, schedule,
                config.online.solver_budget, rng_policy,
            )
        else:
            idx, val = model_mod.best_arm_value(beta_star, action_round)
            choice = online_mod.ArmChoice(index=idx, ucb_value=val, branch="fullrank")

        if choice.branch == "fullrank" and needs_projection and switch_step is None:
            switch_step = step + 1
            state.switched = True

        phi = action_round.features[choice.index]
        noise = float(model_mod.truncated_gaussian(rng_noise, env.noise_std, 1)[0])
        reward = float(phi @ beta_star) + noise
        values = action_round.features @ beta_star
        inst[step] = float(values.max() - values[choice.index])
        arms[step] = choice.index
        branches.append(choice.branch)
        online_mod.update_state(state, phi, reward, estimate)

    return RegretLog(
        policy=policy,
        trial_seed=trial_seed,
        arms=arms,
        branches=branches,
        inst_regret=inst,
        cum_regret=np.cumsum(inst),
        kappas=kappas,
        config_hash=config.digest(),
        delta_off=estimate.delta_off if estimate is not None else math.inf,
        switch_step=switch_step,
    )


@dataclass
class SuiteSummary:
    """Across-trial aggregate of cumulative regret, per policy."""

    policies: tuple
    steps: np.ndarray
    mean: dict
    se: dict
    trials: int
    config_hash: str
    logs: dict = field(default_factory=dict, repr=False)


def _trial_task(args):
    config, estimate, policy, index = args
    return run_online_trial(config, estimate, index, policy=policy)


def run_suite(config, estimate, keep_logs=False):
    """All policies x all trials; mean and standard error per step."""
    if config.trials < 1:
        raise ValidationError("trials must be at least 1")
    env = build_environment(config)
    steps = np.arange(1, config.online.t + 1)
    mean, se, logs = {}, {}, {}
    for policy in config.online.policies:
        if config.workers > 1:
            tasks = [(config, estimate, policy, i) for i in range(config.trials)]
            with concurrent.futures.ProcessPoolExecutor(config.workers) as pool:
                policy_logs = list(pool.map(_trial_task, tasks))
        else:
            policy_logs = [
                run_online_trial(config, estimate, i, policy=policy, env=env)
                for i in range(config.trials)
            ]
        curves = np.stack([log.cum_regret for log in policy_logs])
        mean[policy] = curves.mean(axis=0)
        if config.trials > 1:
            se[policy] = curves.std(axis=0, ddof=1) / math.sqrt(config.trials)
        else:
            se[policy] = np.zeros(curves.shape[1])
        if keep_logs:
            logs[policy] = policy_logs
    return SuiteSummary(
        policies=config.online.policies,
        steps=steps,
        mean=mean,
        se=se,
        trials=config.trials,
        config_hash=config.digest(),
        logs=logs,
    )


def _fmt(x):
    return f"{x:.9g}"


def emit_csv(obj, path):
    """Write a regret log or a suite summary; 9 significant digits, LF."""
    with open(path, "w", newline="\n") as fh:
        if isinstance(obj, RegretLog):
            fh.write("t,arm,branch,inst_regret,cum_regret,kappa\n")
            for i in range(obj.t):
                fh.write(
                    f"{i + 1},{obj.arms[i]},{obj.branches[i]},"
                    f"{_fmt(obj.inst_regret[i])},{_fmt(obj.cum_regret[i])},"
                    f"{_fmt(obj.kappas[i])}\n"
                )
        elif isinstance(obj, SuiteSummary):
            multi = len(obj.policies) > 1
            fh.write("t,mean_regret,se_regret,policy\n" if multi else "t,mean_regret,se_regret\n")
            for policy in obj.policies:
                for i, t in enumerate(obj.steps):
                    row = f"{t},{_fmt(obj.mean[policy][i])},{_fmt(obj.se[policy][i])}"
                    fh.write(row + (f",{policy}\n" if multi else "\n"))
        else:
            raise ValidationError(f"emit_csv cannot serialize {type(obj).__name__}")
