"""Rank-based evaluation: next-location and friend recommendation Recall@K.

Next-location evaluation walks each user's history with teacher forcing
(states always advance on ground-truth locations) and scores every location
at each evaluated position; negative sampling is never used here. Friend
recommendation ranks all non-training-friend candidates by the symmetrized
link log-likelihood. Recall is micro-averaged over events, and ranking ties
break by ascending index.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .model import gru_initial, gru_step, log_sigmoid, rnn_step

COLD_START_MAX_SUBTRAJECTORIES = 5
LOW_DEGREE_MAX_FRIENDS = 5


@dataclass
class EvalReport:
    task: str               # "next-location" | "friend"
    mode: str               # "general" | "new-only" | "-"
    user_slice: str         # "all" | "cold-start" | "low-degree"
    recall_at: dict = field(default_factory=dict)
    num_events: int = 0


def recall_at_k(ranked, truth, k):
    """|truth intersected with the top-k of ranked| / |truth|."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not truth:
        raise ValueError("empty truth set has no defined recall")
    top = set(ranked[:k])
    return len(top & set(truth)) / len(truth)


def _rank_among(scores, target, candidate_mask=None):
    """1-based rank of target, ties broken by ascending index."""
    s_t = scores[target]
    if candidate_mask is None:
        better = int(np.count_nonzero(scores > s_t))
        ties = int(np.count_nonzero(scores[:target] == s_t))
    else:
        better = int(np.count_nonzero((scores > s_t) & candidate_mask))
        ties = int(np.count_nonzero((scores[:target] == s_t)
                                    & candidate_mask[:target]))
    return 1 + better + ties


def _part_range(splits, user, part):
    if part == "train":
        return 0, int(splits.train_end[user])
    if part == "validation":
        return int(splits.train_end[user]), int(splits.test_start[user])
    if part == "test":
        return int(splits.test_start[user]), None
    raise ValueError(f"unknown part {part!r}")


def eval_next_location(params, mask, dataset, splits, ks=(1, 5, 10),
                       mode="general", user_slice="all", part="test",
                       consumed_log=None, per_user_out=None):
    """Micro-averaged Recall@K for next-location prediction.

    mode "general" scores every location at every evaluated position; mode
    "new-only" restricts candidates to locations the user has never visited
    before that position and skips positions whose true location is old.
    user_slice "cold-start" keeps users with at most five subtrajectories.
    part selects which subtrajectory range is scored; earlier history always
    warms the recurrent states with ground-truth inputs. per_user_out, when a
    dict, receives {user: {"events": n, "hits": {k: n}}} for debugging.
    """
    if mode not in ("general", "new-only"):
        raise ValueError(f"unknown mode {mode!r}")
    if user_slice not in ("all", "cold-start"):
        raise ValueError(f"unknown slice {user_slice!r}")
    ks = tuple(sorted(ks))
    hits = {k: 0 for k in ks}
    events = 0
    d = params.dim
    for user in range(dataset.num_users):
        traj = dataset.trajectories[user]
        bounds = traj.subtrajectory_bounds
        m = len(bounds)
        if user_slice == "cold-start" and m > COLD_START_MAX_SUBTRAJECTORIES:
            continue
        lo, hi = _part_range(splits, user, part)
        if hi is None:
            hi = m
        if lo >= hi:
            continue
        locs = traj.locations
        unvisited = np.ones(params.num_locations, dtype=bool)
        cell, hidden = (None, None)
        if mask.use_long:
            cell, hidden = gru_initial(params)
        context = np.zeros(4 * d)
        context[0:d] = params.F[user]
        context[d:2 * d] = params.P[user]
        user_hits = {k: 0 for k in ks}
        user_events = 0
        for j in range(hi):
            b, e = bounds[j]
            if mask.use_long:
                context[3 * d:4 * d] = hidden
            state = params.S0
            for p in range(b, e):
                target = int(locs[p])
                if lo <= j:
                    counted = mode == "general" or unvisited[target]
                    if counted:
                        if mask.use_short:
                            context[2 * d:3 * d] = state
                        scores = params.U_out @ context
                        cand = None if mode == "general" else unvisited
                        rank = _rank_among(scores, target, cand)
                        user_events += 1
                        for k in ks:
                            if rank <= k:
                                user_hits[k] += 1
                if consumed_log is not None:
                    consumed_log.append(target)
                if mask.use_short and p + 1 < e:
                    state = rnn_step(params, state, target)
                if mask.use_long:
                    cell, hidden, _, _, _ = gru_step(params, cell, hidden, target)
                unvisited[target] = False
        events += user_events
        for k in ks:
            hits[k] += user_hits[k]
        if per_user_out is not None and user_events:
            per_user_out[user] = {"events": user_events, "hits": user_hits}
    recall = {k: hits[k] / events for k in ks} if events else {}
    return EvalReport(task="next-location", mode=mode, user_slice=user_slice,
                      recall_at=recall, num_events=events)


def _adjacency_from_edges(edges, num_users):
    neighbors = defaultdict(list)
    for i, j in edges:
        neighbors[i].append(j)
    return [np.array(sorted(neighbors[u]), dtype=np.int64)
            for u in range(num_users)]


def eval_friend_rec(params, dataset, splits, ks=(5, 10), user_slice="all",
                    per_user_out=None):
    """Micro-averaged Recall@K for recommending held-out friends.

    Candidates for user v are all users except v and v's training friends;
    a candidate u is scored by the sum of both directed link log-likelihoods.
    user_slice "low-degree" keeps users with fewer than five training friends.
    """
    if user_slice not in ("all", "low-degree"):
        raise ValueError(f"unknown slice {user_slice!r}")
    ks = tuple(sorted(ks))
    num_users = dataset.num_users
    train_adj = _adjacency_from_edges(splits.train_edges, num_users)
    test_adj = _adjacency_from_edges(splits.test_edges, num_users)
    hits = {k: 0 for k in ks}
    events = 0
    for v in range(num_users):
        truth = test_adj[v]
        if len(truth) == 0:
            continue
        if user_slice == "low-degree" and len(train_adj[v]) >= LOW_DEGREE_MAX_FRIENDS:
            continue
        scores = (log_sigmoid(params.F_ctx @ params.F[v])
                  + log_sigmoid(params.F @ params.F_ctx[v]))
        cand = np.ones(num_users, dtype=bool)
        cand[v] = False
        cand[train_adj[v]] = False
        user_hits = {k: 0 for k in ks}
        for u in truth:
            rank = _rank_among(scores, int(u), cand)
            events += 1
            for k in ks:
                if rank <= k:
                    user_hits[k] += 1
        for k in ks:
            hits[k] += user_hits[k]
        if per_user_out is not None:
            per_user_out[v] = {"events": len(truth), "hits": user_hits}
    recall = {k: hits[k] / events for k in ks} if events else {}
    return EvalReport(task="friend", mode="-", user_slice=user_slice,
                      recall_at=recall, num_events=events)


def write_reports_csv(reports, path):
    """CSV rows: task,mode,slice,K,recall,num_events."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("task,mode,slice,K,recall,num_events\n")
        for r in reports:
            for k in sorted(r.recall_at):
                handle.write(f"{r.task},{r.mode},{r.user_slice},{k},"
                             f"{repr(float(r.recall_at[k]))},{r.num_events}\n")
            if not r.recall_at:
                handle.write(f"{r.task},{r.mode},{r.user_slice},,,"
                             f"{r.num_events}\n")
