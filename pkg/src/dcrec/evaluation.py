"""Ranking protocol, Recall/MAP/NDCG@N, user groups and group profiles.

Conventions: candidates of a user are exactly that user's records in the
evaluated split; ties in score keep input order; MAP@N divides by
min(#positives, N); NDCG uses binary gains with 1/log2(rank + 1) discounts.
Users with no positive test label are excluded from averages and counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .data import ConfounderPrior, Dataset, confounder_label_correlations
from .inference import CostCounter, score_dataset
from .model import Model

METRICS = ("recall", "map", "ndcg")


@dataclass
class UserCandidates:
    user_id: int
    index: np.ndarray  # positions in the split, in split order
    labels: np.ndarray

    @property
    def evaluable(self) -> bool:
        return bool(self.labels.any())


@dataclass
class CandidateSet:
    users: list[UserCandidates]

    @property
    def evaluable(self) -> list[UserCandidates]:
        return [u for u in self.users if u.evaluable]


def build_candidates(split: Dataset) -> CandidateSet:
    """Group the split's records by user (ascending user id)."""
    if len(split) == 0:
        return CandidateSet([])
    order = np.argsort(split.user_ids, kind="stable")
    uids = split.user_ids[order]
    bounds = np.flatnonzero(np.diff(uids)) + 1
    users = []
    for idx in np.split(order, bounds):
        users.append(UserCandidates(int(split.user_ids[idx[0]]), idx, split.test_labels[idx]))
    return CandidateSet(users)


def ranking_metrics(scores, labels, N: int) -> tuple[float, float, float]:
    """(Recall@N, MAP@N, NDCG@N) for one candidate list."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if N < 1:
        raise ValueError("N must be >= 1")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("ranking metrics need at least one positive label")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order][:N].astype(np.float64)
    ranks = np.arange(1, len(hits) + 1)
    recall = hits.sum() / n_pos
    precision_at_k = np.cumsum(hits) / ranks
    ap = float((precision_at_k * hits).sum()) / min(n_pos, N)
    discounts = 1.0 / np.log2(ranks + 1.0)
    dcg = float((hits * discounts).sum())
    idcg = float((1.0 / np.log2(np.arange(1, min(n_pos, N) + 1) + 1.0)).sum())
    return float(recall), ap, dcg / idcg


def softmax_profile(group_means: np.ndarray) -> np.ndarray:
    """Softmax over present groups; absent groups (NaN) stay NaN."""
    out = np.full(len(group_means), np.nan)
    present = ~np.isnan(group_means)
    if present.any():
        out[present] = softmax(group_means[present])
    return out


def profile_from_values(values: np.ndarray, a: np.ndarray, K: int) -> np.ndarray:
    counts = np.bincount(a, minlength=K).astype(np.float64)
    sums = np.bincount(a, weights=values, minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / counts, np.nan)
    return softmax_profile(means)


def group_profile(engine: str, model: Model, prior, split: Dataset, scores: np.ndarray | None = None) -> np.ndarray:
    """Softmax of the mean prediction per confounder group."""
    if scores is None:
        scores = score_dataset(engine, model, prior, split)
    return profile_from_values(scores, split.a, split.schema.K)


def label_profile(split: Dataset) -> np.ndarray:
    """Ground-truth profile: softmax of the mean test label per group."""
    return profile_from_values(split.test_labels.astype(np.float64), split.a, split.schema.K)


def profile_variance(profile) -> float:
    p = np.asarray(profile, dtype=np.float64)
    return float(np.var(p[~np.isnan(p)]))


def split_user_groups(train: Dataset, eval_split: Dataset, top_sample_frac: float, top_positive_frac: float):
    """Active users: top share by training-sample count AND top share by
    positive test labels in ``eval_split``.  Shares are rounded up; ties go
    to the smaller user id."""
    for f in (top_sample_frac, top_positive_frac):
        if not 0.0 < f <= 1.0:
            raise ValueError("fractions must lie in (0, 1]")
    users = np.union1d(np.unique(train.user_ids), np.unique(eval_split.user_ids))
    if len(users) == 0:
        return set(), set()
    pos = np.searchsorted(users, train.user_ids)
    n_samples = np.bincount(pos, minlength=len(users))
    pos = np.searchsorted(users, eval_split.user_ids)
    n_positive = np.bincount(pos, weights=eval_split.test_labels, minlength=len(users))

    def top(counts, frac):
        k = math.ceil(frac * len(users) - 1e-9)
        order = np.lexsort((users, -counts))
        return set(users[order[:k]].tolist())

    active = top(n_samples, top_sample_frac) & top(n_positive, top_positive_frac)
    return active, set(users.tolist()) - active


@dataclass
class EvalReport:
    engine: str
    Ns: list[int]
    metrics: dict[int, dict[str, float]]
    n_users: int
    n_evaluable: int
    n_candidates: int
    rho1: float = float("nan")
    rho2: float = float("nan")
    profile: np.ndarray | None = None
    gt_profile: np.ndarray | None = None
    cost: CostCounter = field(default_factory=CostCounter)
    groups: dict[str, "EvalReport"] = field(default_factory=dict)


def _metrics_for(cands: CandidateSet, scores: np.ndarray, Ns, restrict=None):
    sums = {N: dict.fromkeys(METRICS, 0.0) for N in Ns}
    count = 0
    for u in cands.evaluable:
        if restrict is not None and u.user_id not in restrict:
            continue
        count += 1
        for N in Ns:
            vals = ranking_metrics(scores[u.index], u.labels, N)
            for name, v in zip(METRICS, vals):
                sums[N][name] += v
    out = {N: {k: (v / count if count else float("nan")) for k, v in sums[N].items()} for N in Ns}
    return out, count


def evaluate(
    engine: str,
    model: Model,
    prior: ConfounderPrior,
    split: Dataset,
    Ns=(10,),
    diagnostics: bool = True,
    user_groups: dict[str, set] | None = None,
    scores: np.ndarray | None = None,
) -> EvalReport:
    """Score the split, rank each user's candidates, average over users.

    ``user_groups`` maps a group name (e.g. ``active``) to a user-id set and
    adds one sub-report per group.
    """
    Ns = sorted(set(int(n) for n in Ns))
    counter = CostCounter()
    if scores is None:
        scores = score_dataset(engine, model, prior, split, counter)
    cands = build_candidates(split)
    metrics, n_eval = _metrics_for(cands, scores, Ns)
    rep = EvalReport(engine, Ns, metrics, len(cands.users), n_eval, len(split), cost=counter)
    if diagnostics and len(split):
        rep.rho1, rep.rho2 = confounder_label_correlations(split)
        rep.profile = profile_from_values(scores, split.a, split.schema.K)
        rep.gt_profile = label_profile(split)
    for name, members in (user_groups or {}).items():
        sub, n_sub = _metrics_for(cands, scores, Ns, restrict=members)
        n_users = sum(1 for u in cands.users if u.user_id in members)
        rep.groups[name] = EvalReport(engine, Ns, sub, n_users, n_sub, 0)
    return rep


# ---------------------------------------------------------------- report files


def _fmt(x: float) -> str:
    return repr(float(x))


def report_rows(rep: EvalReport) -> list[tuple[str, int, str]]:
    rows = []
    for N in rep.Ns:
        for name in METRICS:
            rows.append((name, N, _fmt(rep.metrics[N][name])))
    rows += [
        ("users", 0, str(rep.n_users)),
        ("users_evaluable", 0, str(rep.n_evaluable)),
        ("users_excluded", 0, str(rep.n_users - rep.n_evaluable)),
        ("candidates", 0, str(rep.n_candidates)),
        ("eb_evaluations", 0, str(rep.cost.eb_evaluations)),
        ("mlp_evaluations", 0, str(rep.cost.mlp_evaluations)),
        ("rho1", 0, _fmt(rep.rho1)),
        ("rho2", 0, _fmt(rep.rho2)),
    ]
    for key, prof in (("profile", rep.profile), ("gt_profile", rep.gt_profile)):
        if prof is not None:
            rows += [(key, a, _fmt(v)) for a, v in enumerate(prof)]
    for gname, sub in rep.groups.items():
        for N in sub.Ns:
            for name in METRICS:
                rows.append((f"{gname}_{name}", N, _fmt(sub.metrics[N][name])))
        rows.append((f"{gname}_users", 0, str(sub.n_users)))
    return rows


def format_report_kv(rep: EvalReport, header: list[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    lines.append("metric,N,value")
    lines += [f"{k},{n},{v}" for k, n, v in report_rows(rep)]
    return "\n".join(lines) + "\n"


def format_report_text(rep: EvalReport, header: list[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    lines.append(f"engine: {rep.engine}")
    lines.append("MAP@N normaliser: min(#positives, N); NDCG gain: binary, discount 1/log2(rank+1)")
    lines.append(f"users: {rep.n_users} (evaluable {rep.n_evaluable}, excluded {rep.n_users - rep.n_evaluable})")
    lines.append(f"{'N':>4} {'Recall':>10} {'MAP':>10} {'NDCG':>10}")
    for N in rep.Ns:
        m = rep.metrics[N]
        lines.append(f"{N:>4} {m['recall']:>10.6f} {m['map']:>10.6f} {m['ndcg']:>10.6f}")
    for gname, sub in rep.groups.items():
        for N in sub.Ns:
            m = sub.metrics[N]
            lines.append(f"{gname + '@' + str(N):>12} {m['recall']:>10.6f} {m['map']:>10.6f} {m['ndcg']:>10.6f}  ({sub.n_users} users)")
    lines.append(f"rho1 {rep.rho1:.6f}  rho2 {rep.rho2:.6f}")
    lines.append(f"cost: EB {rep.cost.eb_evaluations}  MLP {rep.cost.mlp_evaluations}  candidates {rep.n_candidates}")
    if rep.profile is not None:
        lines.append("profile: " + " ".join(f"{v:.6f}" for v in rep.profile))
        lines.append("gt_profile: " + " ".join(f"{v:.6f}" for v in rep.gt_profile))
    return "\n".join(lines) + "\n"


def format_profile_columns(rep: EvalReport) -> str:
    """gnuplot-friendly columns: a, model profile, ground-truth profile."""
    lines = ["# a profile gt_profile"]
    if rep.profile is not None:
        for a, (p, g) in enumerate(zip(rep.profile, rep.gt_profile)):
            lines.append(f"{a} {_fmt(p)} {_fmt(g)}")
    return "\n".join(lines) + "\n"


def parse_report_kv(text: str) -> dict[tuple[str, int], float]:
    out = {}
    header_seen = False
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        if not header_seen:
            if line.strip() != "metric,N,value":
                raise ValueError("report is missing its 'metric,N,value' header")
            header_seen = True
            continue
        k, n, v = line.split(",")
        out[(k, int(n))] = float(v)
    if not header_seen:
        raise ValueError("empty report")
    return out


def relative_improvement(target: dict, baseline: dict, N: int) -> float:
    """Mean over Recall/MAP/NDCG@N of target/baseline - 1."""
    ratios = [target[(m, N)] / baseline[(m, N)] - 1.0 for m in METRICS]
    return float(np.mean(ratios))
