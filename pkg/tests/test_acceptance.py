"""Acceptance gate: each criterion runs at its stated tolerance and prints
one pass/fail line (run with ``pytest -s`` to see them as they happen).

The synthetic online criteria share one expensive suite build; its runtime
is charged to the first criterion that touches it.
"""

import json
import math
import os
import time

import numpy as np

from latentbandits import cli, harness, offline, online
from conftest import make_synth_dataset
from oracle_formulas import EXPECTED

RESULTS = []


def report(num, name, ok, detail=""):
    line = f"ACCEPTANCE {num:>2} {'PASS' if ok else 'FAIL'}  {name}"
    if detail:
        line += f"  [{detail}]"
    print(line, flush=True)
    RESULTS.append((num, ok))
    assert ok, line


def projector_error(estimate, u_true):
    return np.linalg.norm(estimate.projector() - u_true @ u_true.T, 2)


# --- shared synthetic online suite (criteria 4, 5, 9) -----------------------

_SUITE_CACHE = {}


def synthetic_suite():
    """d_A=50, d_K=2, N=5000, T=1000, practical schedule, tau=5, 30 trials."""
    if _SUITE_CACHE:
        return _SUITE_CACHE
    t0 = time.monotonic()
    cfg = harness.config_from_dict({
        "scenario": "synthetic",
        "dims": {"d_a": 50, "d_k": 2},
        "noise_std": 0.5,
        "offline": {"n": 5000, "h": 20, "variant": "regularized",
                    "bound_kind": "empirical_bernstein"},
        "online": {"t": 1000, "policies": ["linucb"], "schedule": "practical",
                   "tau": 5.0, "tau_prime": 0.0},
        "trials": 30,
        "base_seed": 7,
        "paths": {},
    })
    env = harness.build_environment(cfg)
    estimate = harness.run_offline_phase(cfg)
    oracle_estimate = offline.SubspaceEstimate(
        u_hat=env.model.u_star,
        delta_off=0.0,
        eigenvalues=np.zeros(cfg.d_a),
        bound_inputs=offline.BoundInputs(0.0, 0.0, 1.0, 1.0, 1.0),
    )
    logs = {"linucb": [], "proball-ucb": [], "proball-oracle": []}
    for i in range(cfg.trials):
        logs["linucb"].append(
            harness.run_online_trial(cfg, estimate, i, policy="linucb", env=env))
        logs["proball-ucb"].append(
            harness.run_online_trial(cfg, estimate, i, policy="proball-ucb", env=env))
        logs["proball-oracle"].append(
            harness.run_online_trial(cfg, oracle_estimate, i, policy="proball-ucb", env=env))
    _SUITE_CACHE.update(
        config=cfg, estimate=estimate, logs=logs, elapsed=time.monotonic() - t0
    )
    return _SUITE_CACHE


def finals(logs):
    vals = np.array([log.cum_regret[-1] for log in logs])
    return vals.mean(), vals.std(ddof=1) / math.sqrt(len(vals))


def test_criterion_1_zero_noise_recovery():
    t0 = time.monotonic()
    m, trajs = make_synth_dataset(seed=7, n=200, d_a=10, d_k=2, sigma=0.0, h=20)
    estimate = offline.sold(trajs, 2, variant="pseudoinverse")
    err = projector_error(estimate, m.u_star)
    elapsed = time.monotonic() - t0
    report(1, "zero-noise subspace recovery",
           err <= 1e-6 and elapsed < 5.0,
           f"err={err:.2e}, {elapsed:.2f}s")


def test_criterion_2_consistency_rate():
    t0 = time.monotonic()
    errs = {1000: [], 4000: []}
    for seed in range(10):
        m, trajs = make_synth_dataset(seed=100 + seed, n=4000, d_a=50, d_k=2,
                                      sigma=0.5, h=20)
        for n in (1000, 4000):
            est = offline.sold(trajs[:n], 2, variant="pseudoinverse",
                               reward_bound=2.5)
            errs[n].append(projector_error(est, m.u_star))
    ratio = np.mean(errs[4000]) / np.mean(errs[1000])
    elapsed = time.monotonic() - t0
    report(2, "subspace error shrinks at the parametric rate",
           ratio <= 0.7 and elapsed < 120.0,
           f"err(4000)/err(1000)={ratio:.3f}, {elapsed:.1f}s")


def test_criterion_3_rank_heuristic():
    t0 = time.monotonic()
    hits = 0
    for seed in range(30):
        _, trajs = make_synth_dataset(seed=200 + seed, n=5000, d_a=50, d_k=2,
                                      sigma=0.5, h=20)
        est = offline.sold(trajs, 2, variant="regularized", reward_bound=2.5)
        hits += offline.estimate_rank(est.eigenvalues, rel_threshold=0.45) == 2
    elapsed = time.monotonic() - t0
    report(3, "rank heuristic finds the latent dimension",
           hits >= 28 and elapsed < 120.0, f"{hits}/30 seeds, {elapsed:.1f}s")


def test_criterion_4_no_worse_than_linucb():
    suite = synthetic_suite()
    lin_mean, lin_se = finals(suite["logs"]["linucb"])
    pro_mean, _ = finals(suite["logs"]["proball-ucb"])
    ok = pro_mean <= lin_mean + lin_se and suite["elapsed"] < 600.0
    report(4, "accelerated policy is never worse than LinUCB", ok,
           f"proball={pro_mean:.2f}, linucb={lin_mean:.2f}+/-{lin_se:.2f}, "
           f"suite {suite['elapsed']:.0f}s")


def test_criterion_5_oracle_subspace_speedup():
    suite = synthetic_suite()
    lin_mean, _ = finals(suite["logs"]["linucb"])
    oracle_mean, _ = finals(suite["logs"]["proball-oracle"])
    report(5, "true-subspace projection at least halves regret",
           oracle_mean <= 0.5 * lin_mean,
           f"oracle={oracle_mean:.2f} vs linucb={lin_mean:.2f}")


def test_criterion_6_formula_unit_suite():
    t0 = time.monotonic()
    sched = online.BonusSchedule(reward_bound=1.0, horizon=3, d_a=4, d_k=1,
                                 delta=3 / math.e, style="theory")
    sched_prac = online.BonusSchedule(reward_bound=1.0, horizon=1000, d_a=50,
                                      d_k=2, style="practical")
    summary = offline.MomentSummary(
        m_bar=np.eye(3), d_bar_1=np.eye(3), d_bar_2=np.eye(3),
        m_list_sq_norm=100.0, n=100, variant="regularized", m_max_norm=1.0,
    )
    u_hat = np.eye(4)[:, :2]
    est = offline.SubspaceEstimate(
        u_hat=u_hat, delta_off=0.0, eigenvalues=np.zeros(4),
        bound_inputs=offline.BoundInputs(0.0, 0.0, 1.0, 1.0, 1.0),
    )
    state = online.OnlineLearnerState.fresh(4, u_hat=u_hat)
    online.update_state(state, u_hat[:, 0], 0.0, est)
    checks = {
        "delta_d": offline.bound_delta_d(5000, 50, 0.05)
        - EXPECTED["delta_d_da50_delta005_n5000"],
        "delta_m": offline.bound_delta_m(summary, 0.05, 1.0, 20, 1.0)
        - EXPECTED["delta_m_n100_da3_delta005"],
        "delta_off": offline.compute_delta_off(0.1, 0.0, 2.0, 0.5, 2, 1.0)
        - EXPECTED["delta_off_example"],
        "alpha1_theory": online.alpha1(sched, 1, 0.0, 0.0) - EXPECTED["alpha1_theory_unit"],
        "alpha1_practical": online.alpha1(sched_prac, 1, 0.0, 0.0)
        - EXPECTED["alpha1_practical_dk2_t1000"],
        "kappa": state.kappa - EXPECTED["kappa_single_update"],
    }
    worst = max(abs(v) for v in checks.values())
    elapsed = time.monotonic() - t0
    report(6, "closed-form examples match the high-precision oracle",
           worst <= 1e-9 and elapsed < 1.0, f"worst |diff|={worst:.2e}")


def test_criterion_7_equivalence_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(515)
    ridge_ok = True
    for _ in range(100):
        feats = rng.standard_normal((12, 6))
        rewards = rng.standard_normal(12)
        acc = offline.RidgeAccumulator.from_steps(feats, rewards, mu=0.9)
        beta = offline.ridge_solve(acc)
        ridge_ok &= np.abs(beta - np.linalg.solve(acc.v, acc.b)).max() < 1e-10

    arm_ok = True
    for seed in range(5):
        cfg = harness.config_from_dict({
            "scenario": "synthetic",
            "dims": {"d_a": 20, "d_k": 2},
            "noise_std": 0.3,
            "offline": {"n": 50, "h": 10},
            "online": {"t": 500, "policies": ["linucb"], "schedule": "practical"},
            "trials": 1,
            "base_seed": 900 + seed,
            "paths": {},
        })
        env = harness.build_environment(cfg)
        estimate = harness.run_offline_phase(cfg)
        sentinel = offline.SubspaceEstimate(
            u_hat=estimate.u_hat, delta_off=math.inf,
            eigenvalues=estimate.eigenvalues, bound_inputs=estimate.bound_inputs,
            vacuous=True,
        )
        a = harness.run_online_trial(cfg, sentinel, 0, policy="linucb", env=env)
        b = harness.run_online_trial(cfg, sentinel, 0, policy="proball-ucb", env=env)
        arm_ok &= np.array_equal(a.arms, b.arms)
    elapsed = time.monotonic() - t0
    report(7, "vacuous-bound policy equals LinUCB; ridge equals dense solve",
           ridge_ok and arm_ok and elapsed < 30.0, f"{elapsed:.1f}s")


def test_criterion_8_kappa_growth():
    t0 = time.monotonic()
    rng = np.random.default_rng(42)
    d_a, d_k = 25, 3
    u_hat = np.linalg.qr(rng.standard_normal((d_a, d_k)))[0]
    est = offline.SubspaceEstimate(
        u_hat=u_hat, delta_off=0.1, eigenvalues=np.zeros(d_a),
        bound_inputs=offline.BoundInputs(0.0, 0.0, 1.0, 1.0, 1.0),
    )
    state = online.OnlineLearnerState.fresh(d_a, u_hat=u_hat)
    worst = 0.0
    for _ in range(10_000):
        z = rng.standard_normal(d_k)
        phi = u_hat @ (z / np.linalg.norm(z))
        online.update_state(state, phi, 0.0, est)
        worst = max(worst, state.kappa / math.sqrt(state.t - 1))
    elapsed = time.monotonic() - t0
    report(8, "in-span leakage statistic grows like sqrt(t)",
           worst <= 1.5 and elapsed < 30.0,
           f"max kappa_t/sqrt(t)={worst:.3f}, {elapsed:.1f}s")


def test_criterion_9_switch_monotonicity():
    suite = synthetic_suite()
    cfg = suite["config"]

    def prefix_property(log):
        if log.switch_step is None:
            return all(b == "projected" for b in log.branches)
        s = log.switch_step
        return (all(b == "projected" for b in log.branches[: s - 1])
                and all(b == "fullrank" for b in log.branches[s - 1:]))

    checked = suite["logs"]["proball-ucb"] + suite["logs"]["proball-oracle"]
    # Add a run engineered to switch mid-trajectory.
    env = harness.build_environment(cfg)
    mid = offline.SubspaceEstimate(
        u_hat=suite["estimate"].u_hat,
        delta_off=cfg.d_a / (cfg.online.tau * math.sqrt(400.0)),
        eigenvalues=suite["estimate"].eigenvalues,
        bound_inputs=suite["estimate"].bound_inputs,
    )
    mid_log = harness.run_online_trial(cfg, mid, 0, policy="proball-ucb", env=env)
    checked.append(mid_log)
    ok = all(prefix_property(log) for log in checked)
    mixed = mid_log.branches.count("projected")
    report(9, "projected phase is a prefix once the test fires (tau'=0)",
           ok and 0 < mixed < cfg.online.t,
           f"{len(checked)} logs, engineered switch at t={mid_log.switch_step}")


MOVIELENS_CANDIDATES = [
    os.environ.get("MOVIELENS_RATINGS"),
    os.path.join(os.path.dirname(__file__), "..", "data", "ml-1m", "ratings.dat"),
]


def test_criterion_10_ratings_pipeline(tmp_path):
    factors_path = tmp_path / "factors.json"
    code = cli.main([
        "ingest", "--synthetic", "--out", str(factors_path),
        "--min-count", "10", "--rank", "24", "--reg", "0.1",
        "--sweeps", "8", "--seed", "3",
    ])
    assert code == 0
    doc = json.loads(factors_path.read_text())
    cfg = harness.config_from_dict({
        "scenario": "ratings",
        "dims": {"d_a": doc["d_a"], "d_k": doc["d_k"]},
        "noise_std": doc["noise_std"],
        "offline": {"n": 2000, "h": 50, "variant": "pseudoinverse"},
        "online": {"t": 200, "policies": ["linucb", "proball-ucb"],
                   "schedule": "practical", "tau": 0.1},
        "trials": 30,
        "base_seed": 31,
        "paths": {"factors": str(factors_path)},
    })
    estimate = harness.run_offline_phase(cfg)
    summary = harness.run_suite(cfg, estimate)
    lin_mean = summary.mean["linucb"][-1]
    lin_se = summary.se["linucb"][-1]
    pro_mean = summary.mean["proball-ucb"][-1]
    ok = pro_mean <= lin_mean + lin_se

    detail = (f"fallback corpus, proball={pro_mean:.2f}, "
              f"linucb={lin_mean:.2f}+/-{lin_se:.2f}")
    real = next((p for p in MOVIELENS_CANDIDATES if p and os.path.exists(p)), None)
    if real:
        from latentbandits import data as dm
        raw = dm.load_ratings(real)
        table = dm.filter_min_counts(raw, 200, 200)
        users_ok = abs(table.user_count - 1589) <= 0.05 * 1589
        items_ok = abs(table.item_count - 1426) <= 0.05 * 1426
        ok = ok and len(raw) == 1_000_209 and users_ok and items_ok
        detail += (f"; real corpus {len(raw)} triples, "
                   f"filtered to {table.user_count}x{table.item_count}")
    else:
        detail += "; real corpus absent, count check skipped"
    report(10, "ratings pipeline end to end", ok, detail)
