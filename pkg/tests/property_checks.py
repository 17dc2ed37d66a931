"""Randomized property suites shared by the unit tests and the acceptance gate.

Each function runs `cases` seeded random trials and returns the number of
failing trials (0 expected).
"""

import numpy as np

from lbsnrec import data as lbsn_data
from lbsnrec import evaluation, training
from lbsnrec.model import (ModelParams, VariantMask, forward_trajectory,
                           gru_initial, gru_step, rnn_step, tensor_shapes)


def random_params(rng, num_users, num_locations, dim, scale=0.5):
    tensors = {name: rng.uniform(-scale, scale, size=shape)
               for name, shape in tensor_shapes(num_users, num_locations,
                                                dim).items()}
    return ModelParams(**tensors)


def check_splitting_round_trip(cases=100, seed=0):
    """Subtrajectory bounds partition the sequence and respect the gap rule."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(cases):
        n = int(rng.integers(1, 40))
        gaps = rng.choice([60, 3600, 21600, 21601, 90000], size=n - 1)
        ts = np.concatenate(([1_000_000], 1_000_000 + np.cumsum(gaps))).astype(np.int64)
        bounds = lbsn_data.split_into_subtrajectories(ts)
        ok = bounds[0][0] == 0 and bounds[-1][1] == n
        ok &= all(bounds[i][1] == bounds[i + 1][0] for i in range(len(bounds) - 1))
        pieces = np.concatenate([ts[b:e] for b, e in bounds])
        ok &= np.array_equal(pieces, ts)
        for b, e in bounds:
            ok &= all(ts[i + 1] - ts[i] <= lbsn_data.SIX_HOURS
                      for i in range(b, e - 1))
        for (_, e), (b2, _) in zip(bounds, bounds[1:]):
            ok &= ts[b2] - ts[e - 1] > lbsn_data.SIX_HOURS
        failures += not ok
    return failures


def check_recall_monotonic(cases=100, seed=1):
    """Recall@K never decreases as K grows."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(cases):
        n = int(rng.integers(2, 50))
        ranked = list(rng.permutation(n))
        truth = set(rng.choice(n, size=int(rng.integers(1, n)), replace=False).tolist())
        values = [evaluation.recall_at_k(ranked, truth, k)
                  for k in range(1, n + 1)]
        failures += any(b < a for a, b in zip(values, values[1:]))
    return failures


def _tiny_dataset(rng, num_users=3, num_locations=12):
    checkins = []
    for u in range(num_users):
        t = 1_000_000
        for _ in range(int(rng.integers(2, 4))):       # subtrajectories
            for _ in range(int(rng.integers(1, 4))):   # check-ins
                loc = int(rng.integers(0, num_locations))
                checkins.append(lbsn_data.CheckIn(f"u{u}", f"l{loc:03d}", t))
                t += 3600
            t += 30000
    # make sure every location id exists so permutation keeps |L| fixed
    for loc in range(num_locations):
        checkins.append(lbsn_data.CheckIn("uZ", f"l{loc:03d}", 1_000_000 + loc))
    return lbsn_data.build_dataset(checkins, [("u0", "u1"), ("u1", "u2")])


def check_location_permutation_equivariance(cases=100, seed=2):
    """Relabeling locations consistently leaves every recall value unchanged."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(cases):
        dataset = _tiny_dataset(rng)
        num_locations = dataset.num_locations
        params = random_params(rng, dataset.num_users, num_locations, dim=3)
        splits = lbsn_data.full_train_splits(dataset)
        base = evaluation.eval_next_location(params, VariantMask(), dataset,
                                             splits, ks=(1, 3), part="train")
        perm = rng.permutation(num_locations)
        permuted = params.copy()
        permuted.U[perm] = params.U
        permuted.U_out[perm] = params.U_out
        for traj in dataset.trajectories:
            traj.locations = perm[traj.locations]
        after = evaluation.eval_next_location(permuted, VariantMask(), dataset,
                                              splits, ks=(1, 3), part="train")
        failures += base.recall_at != after.recall_at
    return failures


def check_gate_and_tanh_ranges(cases=100, seed=3):
    """Recurrent activations stay in [-1, 1]; gate outputs in (0, 1)."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(cases):
        d = int(rng.integers(1, 6))
        params = random_params(rng, 2, 5, d, scale=3.0)
        s = rng.normal(size=d)
        loc = int(rng.integers(0, 5))
        out = rnn_step(params, s, loc)
        ok = np.all(np.abs(out) <= 1.0)
        c_prev, h_prev = gru_initial(params)
        cell, hidden, i_gate, f_gate, cand = gru_step(params, c_prev, h_prev, loc)
        ok &= np.all((i_gate > 0) & (i_gate < 1))
        ok &= np.all((f_gate > 0) & (f_gate < 1))
        ok &= np.all(np.abs(cand) <= 1.0) and np.all(np.abs(hidden) <= 1.0)
        locs = rng.integers(0, 5, size=6).astype(np.int64)
        trace = forward_trajectory(params, VariantMask(), 0, locs, [(0, 3), (3, 6)])
        # positions 0 and 3 hold the raw initial state S0, not a tanh output
        ok &= np.all(np.abs(trace.short_states[[1, 2, 4, 5]]) <= 1.0)
        ok &= np.all(np.abs(trace.long_hidden) <= 1.0)
        ok &= np.all((trace.input_gates > 0) & (trace.input_gates < 1))
        ok &= np.all((trace.forget_gates > 0) & (trace.forget_gates < 1))
        failures += not ok
    return failures


def check_adagrad_accumulator_monotone(cases=100, seed=4):
    """Accumulators never decrease and parameters stay finite."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(cases):
        params = random_params(rng, 3, 4, 2, scale=0.1)
        state = training.OptimizerState(params)
        ok = True
        for _ in range(10):
            grads = training.Gradients.like(params)
            for name in ("W", "S0", "b_i"):
                grads.tensor(name)[...] = rng.normal(size=grads.tensor(name).shape)
            row = int(rng.integers(0, 3))
            grads.P[row] = rng.normal(size=2)
            grads.touch("P", row)
            before = {n: state.accumulators[n].copy()
                      for n in ("W", "S0", "b_i", "P")}
            training.adagrad_update(params, grads, state, 0.1, 1e-8)
            for n, prev in before.items():
                ok &= np.all(state.accumulators[n] >= prev)
            ok &= all(np.isfinite(params.tensor(n)).all()
                      for n in ("W", "S0", "b_i", "P"))
        failures += not ok
    return failures


ALL_CHECKS = (
    ("trajectory splitting round-trip", check_splitting_round_trip),
    ("recall monotonicity in K", check_recall_monotonic),
    ("location-permutation equivariance", check_location_permutation_equivariance),
    ("gate/tanh range bounds", check_gate_and_tanh_ranges),
    ("adagrad accumulator monotonicity", check_adagrad_accumulator_monotone),
)
