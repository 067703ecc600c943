"""Benchmark the compiled kernel core against the numpy fallback.

Times the per-step online workload (arm scoring plus the rank-one state
updates) on each available backend, then verifies agreement on a fixed
update stream: scores must match to 1e-9 and any arm disagreement must be
a genuine tie at that tolerance. (Under closed-loop feedback the two
backends can legitimately diverge after a near-tie, so the correctness
pass deliberately replays the same stream into both.)

    python benchmarks/bench_backends.py --d-a 50 --steps 2000
"""

import argparse
import time

import numpy as np

from latentbandits import kernels, model, offline, online


def make_estimate(rng, d_a, d_k):
    u_hat = np.linalg.qr(rng.standard_normal((d_a, d_k)))[0]
    return offline.SubspaceEstimate(
        u_hat=u_hat,
        delta_off=0.0,
        eigenvalues=np.zeros(d_a),
        bound_inputs=offline.BoundInputs(0.0, 0.0, 1.0, 1.0, 1.0),
    )


def timing_run(d_a, d_k, steps, arms, seed):
    """Closed-loop LinUCB steps; returns elapsed seconds."""
    rng = np.random.default_rng(seed)
    estimate = make_estimate(rng, d_a, d_k)
    schedule = online.BonusSchedule(
        reward_bound=1.0, horizon=steps, d_a=d_a, d_k=d_k, style="practical"
    )
    beta_star = estimate.u_hat @ rng.standard_normal(d_k)
    state = online.OnlineLearnerState.fresh(d_a, u_hat=estimate.u_hat)
    start = time.perf_counter()
    for _ in range(steps):
        feats = rng.standard_normal((arms, d_a))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        choice = online.linucb_select(
            state, model.ActionRound(feats), online.alpha2(schedule, state.t)
        )
        phi = feats[choice.index]
        online.update_state(state, phi, float(phi @ beta_star), estimate)
    return time.perf_counter() - start


def agreement_run(d_a, d_k, steps, arms, seed):
    """Replay one fixed stream; returns per-step scores and arm choices."""
    rng = np.random.default_rng(seed)
    estimate = make_estimate(rng, d_a, d_k)
    rounds = []
    updates = []
    for _ in range(steps):
        feats = rng.standard_normal((arms, d_a))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        rounds.append(feats)
        updates.append((feats[0], rng.standard_normal()))
    state = online.OnlineLearnerState.fresh(d_a, u_hat=estimate.u_hat)
    scores, arms_chosen = [], []
    for feats, (phi, reward) in zip(rounds, updates):
        step_scores = kernels.ucb_scores(feats, state.v_inv @ state.b,
                                         state.v_inv, 0.5)
        scores.append(step_scores)
        arms_chosen.append(int(np.argmax(step_scores)))
        online.update_state(state, phi, reward, estimate)
    return np.array(scores), arms_chosen


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--d-a", type=int, default=50)
    parser.add_argument("--d-k", type=int, default=2)
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--arms", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {backends}; d_a={args.d_a}, d_k={args.d_k}, "
          f"steps={args.steps}, arms={args.arms}")

    times = {}
    for backend in backends:
        kernels.use_backend(backend)
        best = min(
            timing_run(args.d_a, args.d_k, args.steps, args.arms, args.seed)
            for _ in range(args.repeats)
        )
        times[backend] = best
        print(f"  {backend:<9} {args.steps / best:>10.0f} steps/s "
              f"({best * 1e3 / args.steps:.3f} ms/step)")

    if len(backends) == 2:
        results = {}
        for backend in backends:
            kernels.use_backend(backend)
            results[backend] = agreement_run(
                args.d_a, args.d_k, min(args.steps, 500), args.arms, args.seed
            )
        scores_py, arms_py = results["python"]
        scores_cy, arms_cy = results["compiled"]
        worst = np.abs(scores_py - scores_cy).max()
        flips = [
            i for i, (a, b) in enumerate(zip(arms_py, arms_cy)) if a != b
        ]
        real_flips = [
            i for i in flips
            if abs(scores_py[i][arms_py[i]] - scores_py[i][arms_cy[i]]) > 1e-9
        ]
        print(f"  fixed-stream score agreement: max |diff| = {worst:.2e}")
        print(f"  arm choices: {len(flips)} tie flips, {len(real_flips)} real divergences")
        print(f"  speedup compiled/python: {times['python'] / times['compiled']:.2f}x")
        if worst > 1e-9 or real_flips:
            raise SystemExit("backend outputs diverge beyond tolerance")


if __name__ == "__main__":
    main()
