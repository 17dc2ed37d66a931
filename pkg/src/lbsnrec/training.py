"""Negative-sampled training with hand-written backpropagation through time.

One epoch alternates a network pass (per user: observed out-links against
sampled non-neighbors) and a trajectory pass (per check-in: the true next
location against sampled negative locations, with gradients pushed back
through the short-term recurrence of each subtrajectory and the gated
long-term chain of the whole sequence). Updates use AdaGrad on mini-batches
of users. All randomness flows from one seed split into per-purpose streams.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .model import (EMBEDDING_NAMES, TENSOR_NAMES, ModelParams, VariantMask,
                    forward_trajectory, tensor_shapes)


@dataclass
class TrainConfig:
    d: int = 50
    learning_rate: float = 0.1
    n1_per_user: int = 100          # negative links sampled per user
    n2: int = 100                   # negative locations per prediction
    max_iterations: int = 50
    batch_users: int = 32
    seed: int = 0
    init_range: float = 0.02
    adagrad_epsilon: float = 1e-8
    variant: VariantMask = field(default_factory=VariantMask)
    patience: int = 3
    validation_k: int = 5

    def __post_init__(self):
        if self.d <= 0 or self.batch_users <= 0:
            raise ValueError("d and batch_users must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.init_range < 0 or self.adagrad_epsilon <= 0:
            raise ValueError("init_range must be >= 0, adagrad_epsilon > 0")
        if self.n1_per_user < 0 or self.n2 < 0 or self.max_iterations < 0:
            raise ValueError("counts must be >= 0")


@dataclass
class RngStreams:
    """Independent per-purpose generators derived from one seed."""

    init: np.random.Generator
    link_negatives: np.random.Generator
    location_negatives: np.random.Generator
    shuffle: np.random.Generator


def rng_streams(seed):
    children = np.random.SeedSequence(seed).spawn(4)
    return RngStreams(*(np.random.default_rng(c) for c in children))


class Gradients:
    """Gradient buffers shaped like ModelParams with touched-row bookkeeping.

    Embedding rows outside the touched sets are exactly zero.
    """

    def __init__(self, num_users, num_locations, dim):
        for name, shape in tensor_shapes(num_users, num_locations, dim).items():
            setattr(self, name, np.zeros(shape))
        self.touched = {name: set() for name in EMBEDDING_NAMES}

    @classmethod
    def like(cls, params):
        return cls(params.num_users, params.num_locations, params.dim)

    def tensor(self, name):
        return getattr(self, name)

    def touch(self, name, rows):
        self.touched[name].update(int(r) for r in np.atleast_1d(rows))

    def touched_rows(self, name):
        return np.array(sorted(self.touched[name]), dtype=np.int64)


class OptimizerState:
    """Per-entry sums of squared gradients for AdaGrad."""

    def __init__(self, params):
        self.accumulators = {name: np.zeros_like(params.tensor(name))
                             for name in TENSOR_NAMES}


def init_params(config, num_users, num_locations):
    """Draw every tensor entry i.i.d. uniform on [-init_range, init_range]."""
    rng = rng_streams(config.seed).init
    r = config.init_range
    tensors = {}
    for name, shape in tensor_shapes(num_users, num_locations, config.d).items():
        tensors[name] = rng.uniform(-r, r, size=shape)
    return ModelParams(**tensors)


def _rejection_sample(count, population, excluded, rng):
    """count distinct draws uniform over range(population) avoiding excluded."""
    out = []
    seen = set()
    while len(out) < count:
        draw = rng.integers(0, population, size=2 * (count - len(out)) + 8)
        for v in draw:
            v = int(v)
            if v in excluded or v in seen:
                continue
            seen.add(v)
            out.append(v)
            if len(out) == count:
                break
    return np.array(out, dtype=np.int64)


def sample_negative_links(graph, user, count, rng):
    """Distinct users that are neither `user` nor its out-neighbors.

    Rejection-sampled from the uniform distribution over users; if fewer than
    `count` users are eligible, all of them are returned (ascending).
    """
    excluded = set(int(v) for v in graph.adjacency[user])
    excluded.add(int(user))
    eligible = graph.num_users - len(excluded)
    if eligible <= count:
        return np.array([v for v in range(graph.num_users) if v not in excluded],
                        dtype=np.int64)
    return _rejection_sample(count, graph.num_users, excluded, rng)


def sample_negative_locations(num_locations, target, n2, rng):
    """n2 distinct locations uniform without replacement, excluding target."""
    if num_locations - 1 <= n2:
        out = np.arange(num_locations, dtype=np.int64)
        return out[out != target]
    return _rejection_sample(n2, num_locations, {int(target)}, rng)


# ---------------------------------------------------------------------------
# Frozen batches: negatives are drawn once and the loss/gradient functions
# below are deterministic in (params, batch), which is what the
# finite-difference gradient checker relies on.
# ---------------------------------------------------------------------------

@dataclass
class NetworkBatch:
    users: np.ndarray
    negatives: list     # per user, sampled non-neighbor indices


@dataclass
class TrajectoryBatch:
    users: np.ndarray
    views: list         # per user, (locations, bounds) restricted to train range
    negatives: list     # per user, list of per-position negative arrays


def draw_network_batch(graph, users, n1, rng):
    users = np.asarray(users, dtype=np.int64)
    negatives = [sample_negative_links(graph, int(u), n1, rng) for u in users]
    return NetworkBatch(users=users, negatives=negatives)


def training_view(dataset, splits, user):
    """(locations, bounds) of the user's training subtrajectories."""
    traj = dataset.trajectories[user]
    t = int(splits.train_end[user])
    bounds = traj.subtrajectory_bounds[:t]
    if not bounds:
        return np.zeros(0, dtype=np.int64), []
    n = bounds[-1][1]
    return traj.locations[:n], bounds


def draw_trajectory_batch(dataset, splits, users, n2, rng):
    users = np.asarray(users, dtype=np.int64)
    views = []
    negatives = []
    num_locations = dataset.num_locations
    for u in users:
        locs, bounds = training_view(dataset, splits, int(u))
        views.append((locs, bounds))
        negatives.append([sample_negative_locations(num_locations, int(l), n2, rng)
                          for l in locs])
    return TrajectoryBatch(users=users, views=views, negatives=negatives)


def network_loss_and_grads(params, graph, batch, grads=None):
    """Negative log-likelihood of observed links vs. frozen negatives, with grads.

    Per user v: -sum log sigmoid(F_v . F'_u) over out-neighbors u, minus
    sum log(1 - sigmoid(F_v . F'_w)) over the batch's negatives w.
    """
    if grads is None:
        grads = Gradients.like(params)
    loss = 0.0
    for u, negs in zip(batch.users, batch.negatives):
        u = int(u)
        pos = graph.adjacency[u]
        fv = params.F[u]
        dfv = np.zeros_like(fv)
        if len(pos):
            s = params.F_ctx[pos] @ fv
            loss += np.logaddexp(0.0, -s).sum()
            coef = expit(s) - 1.0
            dfv += coef @ params.F_ctx[pos]
            grads.F_ctx[pos] += np.outer(coef, fv)
            grads.touch("F_ctx", pos)
        if len(negs):
            s = params.F_ctx[negs] @ fv
            loss += np.logaddexp(0.0, s).sum()
            coef = expit(s)
            dfv += coef @ params.F_ctx[negs]
            grads.F_ctx[negs] += np.outer(coef, fv)
            grads.touch("F_ctx", negs)
        if len(pos) or len(negs):
            grads.F[u] += dfv
            grads.touch("F", u)
    return float(loss), grads


def sampled_location_loss(params, context, target, negatives):
    """Candidate-softmax loss of the target against frozen negative locations.

    Returns (loss, grad wrt context, candidate indices, grad wrt the
    candidates' scores); the gradient of U_out[c] is grad_scores[c] * context.
    """
    cands = np.concatenate(([int(target)], np.asarray(negatives, dtype=np.int64)))
    scores = params.U_out[cands] @ context
    m = scores.max()
    exps = np.exp(scores - m)
    z = exps.sum()
    loss = float(np.log(z) + m - scores[0])
    grad_scores = exps / z
    grad_scores[0] -= 1.0
    grad_context = grad_scores @ params.U_out[cands]
    return loss, grad_context, cands, grad_scores


def trajectory_loss_and_grads(params, mask, batch, grads=None):
    """Sampled next-location loss over a frozen batch, with full BPTT gradients.

    Backward pass per user: the context gradient at each position feeds
    P[v], F[v], the short-term state consulted there, and the long-term
    hidden state frozen at that position's subtrajectory boundary. Short-term
    gradients run backward inside each subtrajectory to S0, U and W;
    boundary-hidden gradients run backward through every gated step to C0,
    the gate matrices and biases, accumulating U rows on the way.
    """
    if grads is None:
        grads = Gradients.like(params)
    d = params.dim
    total = 0.0
    for user, (locs, bounds), negs in zip(batch.users, batch.views, batch.negatives):
        user = int(user)
        n = len(locs)
        if n == 0:
            continue
        trace = forward_trajectory(params, mask, user, locs, bounds)
        d_context = np.zeros((n, 4 * d))
        for p in range(n):
            loss, d_ctx, cands, d_scores = sampled_location_loss(
                params, trace.contexts[p], locs[p], negs[p])
            total += loss
            d_context[p] = d_ctx
            grads.U_out[cands] += np.outer(d_scores, trace.contexts[p])
            grads.touch("U_out", cands)
        grads.F[user] += d_context[:, 0:d].sum(axis=0)
        grads.P[user] += d_context[:, d:2 * d].sum(axis=0)
        grads.touch("F", user)
        grads.touch("P", user)

        if mask.use_short:
            s_used = trace.short_states
            for b, e in bounds:
                d_s = d_context[b:e, 2 * d:3 * d].copy()
                for i in range(e - b - 1, 0, -1):
                    p = b + i
                    d_pre = d_s[i] * (1.0 - s_used[p] ** 2)
                    grads.U[locs[p - 1]] += d_pre
                    grads.touch("U", locs[p - 1])
                    grads.W += np.outer(d_pre, s_used[p - 1])
                    d_s[i - 1] += params.W.T @ d_pre
                grads.S0 += d_s[0]

        if mask.use_long:
            # d_hidden[t] collects gradient reaching h_t; boundary injections
            # land at the subtrajectory start indices.
            d_hidden = np.zeros((n + 1, d))
            for b, e in bounds:
                d_hidden[b] += d_context[b:e, 3 * d:4 * d].sum(axis=0)
            last_consulted = bounds[-1][0]
            d_cell = np.zeros(d)
            for t in range(last_consulted, 0, -1):
                h_t = trace.long_hidden[t]
                d_cell = d_cell + d_hidden[t] * (1.0 - h_t ** 2)
                i_gate = trace.input_gates[t - 1]
                f_gate = trace.forget_gates[t - 1]
                cand = trace.candidate_states[t - 1]
                d_i_pre = d_cell * cand * i_gate * (1.0 - i_gate)
                d_f_pre = d_cell * trace.long_cells[t - 1] * f_gate * (1.0 - f_gate)
                d_c_pre = d_cell * i_gate * (1.0 - cand ** 2)
                x = params.U[locs[t - 1]]
                h_prev = trace.long_hidden[t - 1]
                grads.W_i1 += np.outer(d_i_pre, x)
                grads.W_i2 += np.outer(d_i_pre, h_prev)
                grads.b_i += d_i_pre
                grads.W_f1 += np.outer(d_f_pre, x)
                grads.W_f2 += np.outer(d_f_pre, h_prev)
                grads.b_f += d_f_pre
                grads.W_c1 += np.outer(d_c_pre, x)
                grads.W_c2 += np.outer(d_c_pre, h_prev)
                grads.b_c += d_c_pre
                grads.U[locs[t - 1]] += (params.W_i1.T @ d_i_pre
                                         + params.W_f1.T @ d_f_pre
                                         + params.W_c1.T @ d_c_pre)
                grads.touch("U", locs[t - 1])
                d_hidden[t - 1] += (params.W_i2.T @ d_i_pre
                                    + params.W_f2.T @ d_f_pre
                                    + params.W_c2.T @ d_c_pre)
                d_cell = d_cell * f_gate
            h0 = trace.long_hidden[0]
            grads.C0 += d_cell + d_hidden[0] * (1.0 - h0 ** 2)
    return float(total), grads


def sampled_network_loss_and_grads(params, graph, config, rng, users=None):
    """Draw fresh negative links and evaluate the sampled network objective."""
    if users is None:
        users = np.arange(graph.num_users, dtype=np.int64)
    batch = draw_network_batch(graph, users, config.n1_per_user, rng)
    return network_loss_and_grads(params, graph, batch)


def network_iteration(params, graph, config, rng):
    """One full pass of the sampled network objective over all users."""
    return sampled_network_loss_and_grads(params, graph, config, rng)


def trajectory_iteration(params, dataset, splits, config, rng, users=None):
    """One full pass of the sampled trajectory objective over training data."""
    if users is None:
        users = np.arange(dataset.num_users, dtype=np.int64)
    batch = draw_trajectory_batch(dataset, splits, users, config.n2, rng)
    return trajectory_loss_and_grads(params, config.variant, batch)


def adagrad_update(params, grads, optimizer_state, learning_rate, epsilon):
    """In-place AdaGrad step; embedding tensors update touched rows only."""
    for name in TENSOR_NAMES:
        acc = optimizer_state.accumulators[name]
        target = params.tensor(name)
        if name in EMBEDDING_NAMES:
            rows = grads.touched_rows(name)
            if len(rows) == 0:
                continue
            g = grads.tensor(name)[rows]
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient in tensor {name}")
            acc[rows] += g * g
            target[rows] -= learning_rate * g / (np.sqrt(acc[rows]) + epsilon)
        else:
            g = grads.tensor(name)
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient in tensor {name}")
            acc += g * g
            target -= learning_rate * g / (np.sqrt(acc) + epsilon)


@dataclass
class EpochRecord:
    epoch: int
    net_loss: float
    traj_loss: float
    val_recall: float | None
    seconds: float


def _format_float(x):
    return repr(float(x))


def write_training_log(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("epoch,net_loss,traj_loss,val_recall5,seconds\n")
        for r in records:
            recall = _format_float(r.val_recall) if r.val_recall is not None else "nan"
            handle.write(f"{r.epoch},{_format_float(r.net_loss)},"
                         f"{_format_float(r.traj_loss)},{recall},"
                         f"{_format_float(r.seconds)}\n")


def _chunks(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def train(dataset, splits, config, checkpoint_path, log_path=None):
    """Alternate network and trajectory passes with per-batch AdaGrad updates.

    Each epoch shuffles the users, runs the network pass then the trajectory
    pass in batches of config.batch_users (one AdaGrad update per batch), and
    evaluates validation Recall@K for next-location prediction. The
    best-validation parameters are checkpointed; training stops after
    config.max_iterations epochs or once validation recall has not improved
    for config.patience consecutive epochs. Without validation events every
    epoch checkpoints and only max_iterations stops the loop.
    """
    from .data import build_graph
    from .evaluation import eval_next_location
    from .model import save_checkpoint

    streams = rng_streams(config.seed)
    params = init_params(config, dataset.num_users, dataset.num_locations)
    state = OptimizerState(params)
    train_graph = build_graph(dataset.num_users, splits.train_edges)
    vocab_args = (dataset.user_vocab.ids, dataset.location_vocab.ids)

    save_checkpoint(checkpoint_path, params, config.variant, *vocab_args)
    records = []
    best = -np.inf
    stale = 0
    for epoch in range(1, config.max_iterations + 1):
        start = time.perf_counter()
        net_loss = 0.0
        order = streams.shuffle.permutation(dataset.num_users)
        for users in _chunks(order, config.batch_users):
            batch = draw_network_batch(train_graph, users, config.n1_per_user,
                                       streams.link_negatives)
            loss, grads = network_loss_and_grads(params, train_graph, batch)
            adagrad_update(params, grads, state, config.learning_rate,
                           config.adagrad_epsilon)
            net_loss += loss

        traj_loss = 0.0
        order = streams.shuffle.permutation(dataset.num_users)
        for users in _chunks(order, config.batch_users):
            batch = draw_trajectory_batch(dataset, splits, users, config.n2,
                                          streams.location_negatives)
            loss, grads = trajectory_loss_and_grads(params, config.variant, batch)
            adagrad_update(params, grads, state, config.learning_rate,
                           config.adagrad_epsilon)
            traj_loss += loss

        report = eval_next_location(params, config.variant, dataset, splits,
                                    ks=(config.validation_k,), part="validation")
        recall = report.recall_at.get(config.validation_k)
        seconds = time.perf_counter() - start
        records.append(EpochRecord(epoch=epoch, net_loss=net_loss,
                                   traj_loss=traj_loss, val_recall=recall,
                                   seconds=seconds))
        if recall is None:
            save_checkpoint(checkpoint_path, params, config.variant, *vocab_args)
            continue
        if recall > best:
            best = recall
            stale = 0
            save_checkpoint(checkpoint_path, params, config.variant, *vocab_args)
        else:
            stale += 1
            if stale >= config.patience:
                break
    if log_path is not None:
        write_training_log(records, log_path)
    return records
