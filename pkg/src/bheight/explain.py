"""Model-agnostic importance scores and multi-method feature selection.

All explainers only require a fitted ``predict``-capable model. Scores are
keyed by feature name; ranks are 1-based, descending score, ties broken by
name so reports are stable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError

METHOD_RF_VI = "rf_vi"
METHOD_PERMUTATION = "permutation"
METHOD_SHAPLEY = "shapley"


def _rng(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def _mse(y, yhat) -> float:
    return float(np.mean((np.asarray(y) - np.asarray(yhat)) ** 2))


def _default_names(p: int) -> list[str]:
    return [f"f{j}" for j in range(p)]


def rank_by_score(scores: dict[str, float]) -> dict[str, int]:
    """1-based ranks, highest score first, ties by feature name."""
    ordered = sorted(scores, key=lambda name: (-scores[name], name))
    return {name: i + 1 for i, name in enumerate(ordered)}


@dataclass
class ImportanceReport:
    """Per-feature scores from one method, with deterministic ranks."""

    method: str
    scores: dict[str, float]
    metadata: dict = field(default_factory=dict)
    rank: dict[str, int] = field(init=False)

    def __post_init__(self):
        if self.method not in (METHOD_RF_VI, METHOD_PERMUTATION, METHOD_SHAPLEY):
            raise ParameterError(f"unknown importance method {self.method!r}")
        if not self.scores:
            raise DataError("an importance report needs at least one feature")
        self.rank = rank_by_score(self.scores)

    def ordered_features(self) -> list[str]:
        return sorted(self.rank, key=self.rank.get)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "score", "rank"])
            for name in self.ordered_features():
                writer.writerow([name, repr(float(self.scores[name])), self.rank[name]])


def permutation_importance(
    model,
    X,
    y,
    names=None,
    repeats: int = 5,
    seed: int = 0,
    metric=None,
) -> ImportanceReport:
    """Increase in error when one feature's column is shuffled.

    The baseline error is ``metric(y, model.predict(X))`` (MSE by default).
    For feature ``j`` and repeat ``r`` the column is permuted with a
    generator seeded by ``(seed, j, r)``; the score is the mean permuted
    error minus the baseline. A model that never reads a feature scores
    exactly 0 for it.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("X must be 2-D")
    n, p = X.shape
    if n == 0:
        raise DataError("permutation importance is undefined on an empty table")
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    metric = metric or _mse
    names = _default_names(p) if names is None else list(names)
    if len(names) != p:
        raise DataError(f"{len(names)} names for {p} features")
    base = metric(y, model.predict(X))
    work = X.copy()
    scores = {}
    for j in range(p):
        original = work[:, j].copy()
        # Averaging per-repeat differences keeps an ignored feature at an
        # exact 0.0 for any repeat count; mean-then-subtract would not.
        acc = 0.0
        for r in range(repeats):
            perm = _rng(seed, j, r).permutation(n)
            work[:, j] = original[perm]
            acc += metric(y, model.predict(work)) - base
        work[:, j] = original
        scores[names[j]] = acc / repeats
    return ImportanceReport(
        METHOD_PERMUTATION,
        scores,
        metadata={"repeats": repeats, "seed": seed, "baseline": base},
    )


# ---------------------------------------------------------------------------
# Shapley values
# ---------------------------------------------------------------------------

EXACT_LIMIT = 15


def shapley_values(
    model,
    x,
    background,
    mode: str = "exact",
    samples: int = 2000,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Interventional Shapley values for one row.

    The value of a coalition is the model's mean prediction over the
    background rows with coalition features taken from ``x``. ``exact``
    enumerates all coalitions (feature count capped at 15); ``sampled``
    averages marginal contributions over random feature orderings. Returns
    ``(phi, base)`` where ``base`` is the empty-coalition value; in exact
    mode ``base + phi.sum()`` equals the prediction at ``x`` up to float
    error.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    background = np.asarray(background, dtype=np.float64)
    if background.ndim != 2 or background.shape[0] == 0:
        raise DataError("background must be a non-empty 2-D matrix")
    p = x.shape[0]
    if background.shape[1] != p:
        raise DataError("background width does not match the explained row")
    B = background.shape[0]
    if mode == "exact":
        if p > EXACT_LIMIT:
            raise ParameterError(
                f"exact Shapley enumerates 2^{p} coalitions; "
                f"limit is {EXACT_LIMIT} features, use mode='sampled'"
            )
        n_sets = 1 << p
        masks = np.arange(n_sets, dtype=np.uint32)
        member = np.zeros((n_sets, p), dtype=bool)
        sizes = np.zeros(n_sets, dtype=np.int64)
        for b in range(p):
            onbit = (masks >> b) & 1 == 1
            member[:, b] = onbit
            sizes += onbit
        v = np.empty(n_sets, dtype=np.float64)
        chunk = max(1, int(200_000 / max(1, B)))
        for s in range(0, n_sets, chunk):
            sl = slice(s, min(s + chunk, n_sets))
            comp = np.where(member[sl, None, :], x[None, None, :], background[None, :, :])
            preds = np.asarray(
                model.predict(comp.reshape(-1, p)), dtype=np.float64
            ).reshape(-1, B)
            v[sl] = preds.mean(axis=1)
        fact = [math.factorial(i) for i in range(p + 1)]
        weight_by_size = np.array(
            [fact[s] * fact[p - s - 1] / fact[p] for s in range(p)], dtype=np.float64
        )
        phi = np.zeros(p, dtype=np.float64)
        idx = np.arange(n_sets, dtype=np.uint32)
        for j in range(p):
            without = idx[~member[:, j]]
            with_j = without | np.uint32(1 << j)
            w = weight_by_size[sizes[without]]
            phi[j] = float(np.sum(w * (v[with_j] - v[without])))
        return phi, float(v[0])
    if mode == "sampled":
        if samples < 1:
            raise ParameterError(f"samples must be >= 1, got {samples}")
        rng = _rng(seed)
        base = float(np.mean(np.asarray(model.predict(background), dtype=np.float64)))
        phi = np.zeros(p, dtype=np.float64)
        chunk = max(1, int(60_000 / max(1, (p + 1) * B)))
        done = 0
        while done < samples:
            take = min(chunk, samples - done)
            orders = np.stack([rng.permutation(p) for _ in range(take)])
            member = np.zeros((take, p + 1, p), dtype=bool)
            for step in range(1, p + 1):
                member[:, step] = member[:, step - 1]
                member[np.arange(take), step, orders[:, step - 1]] = True
            comp = np.where(
                member[:, :, None, :], x[None, None, None, :], background[None, None, :, :]
            )
            preds = np.asarray(
                model.predict(comp.reshape(-1, p)), dtype=np.float64
            ).reshape(take, p + 1, B)
            v = preds.mean(axis=2)
            margins = np.diff(v, axis=1)
            for i in range(take):
                phi[orders[i]] += margins[i]
            done += take
        return phi / samples, base
    raise ParameterError(f"unknown Shapley mode {mode!r}")


def shapley_global(
    model,
    X,
    background,
    names=None,
    mode: str = "exact",
    samples: int = 2000,
    seed: int = 0,
) -> ImportanceReport:
    """Mean absolute Shapley value per feature over the rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("X must be a non-empty 2-D matrix")
    p = X.shape[1]
    names = _default_names(p) if names is None else list(names)
    if len(names) != p:
        raise DataError(f"{len(names)} names for {p} features")
    acc = np.zeros(p, dtype=np.float64)
    for i in range(X.shape[0]):
        phi, _ = shapley_values(
            model, X[i], background, mode=mode, samples=samples, seed=seed + i
        )
        acc += np.abs(phi)
    scores = dict(zip(names, (acc / X.shape[0]).tolist()))
    return ImportanceReport(
        METHOD_SHAPLEY,
        scores,
        metadata={
            "mode": mode,
            "samples": samples if mode == "sampled" else None,
            "background": int(np.asarray(background).shape[0]),
            "rows": int(X.shape[0]),
            "seed": seed,
        },
    )


# ---------------------------------------------------------------------------
# Consensus selection
# ---------------------------------------------------------------------------


@dataclass
class ConsensusRanking:
    """Borda-fused ranking across importance reports, plus the chosen set."""

    selected: list[str]
    fused_scores: dict[str, float]
    weights: dict[str, float]
    k: int
    forced: list[str]

    def to_json(self) -> dict:
        return {
            "methods": sorted(self.weights),
            "weights": {m: self.weights[m] for m in sorted(self.weights)},
            "k": self.k,
            "selected": list(self.selected),
            "forced": list(self.forced),
        }


def consensus_select(
    reports,
    k: int,
    weights: dict[str, float] | None = None,
    overrides=(),
) -> ConsensusRanking:
    """Fuse importance rankings by weighted Borda count and pick ``k`` features.

    Every report must rank the same feature set. A feature ranked ``r`` among
    ``n`` features contributes ``n - r + 1`` Borda points times the method's
    weight (default 1). Fused ties break by mean raw rank, then name.
    ``overrides`` forces features into the selection ahead of the ranking.
    """
    reports = list(reports)
    if not reports:
        raise DataError("consensus needs at least one importance report")
    base_set = set(reports[0].scores)
    for rep in reports[1:]:
        if set(rep.scores) != base_set:
            diff = sorted(set(rep.scores) ^ base_set)
            raise DataError(
                f"importance reports disagree on the feature set: {diff}"
            )
    names = sorted(base_set)
    n = len(names)
    if not (1 <= k <= n):
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    weights = dict(weights or {})
    for rep in reports:
        weights.setdefault(rep.method, 1.0)
    unknown = set(weights) - {rep.method for rep in reports}
    if unknown:
        raise ParameterError(f"weights given for absent methods: {sorted(unknown)}")
    fused = {name: 0.0 for name in names}
    mean_rank = {name: 0.0 for name in names}
    for rep in reports:
        w = weights[rep.method]
        for name in names:
            fused[name] += w * (n - rep.rank[name] + 1)
            mean_rank[name] += rep.rank[name] / len(reports)
    ordered = sorted(names, key=lambda nm: (-fused[nm], mean_rank[nm], nm))
    forced = []
    for name in overrides:
        if name not in base_set:
            raise DataError(f"override {name!r} is not a known feature")
        if name not in forced:
            forced.append(name)
    if len(forced) > k:
        raise ParameterError(f"{len(forced)} overrides exceed k={k}")
    selected = list(forced)
    for name in ordered:
        if len(selected) == k:
            break
        if name not in selected:
            selected.append(name)
    return ConsensusRanking(
        selected=selected,
        fused_scores=fused,
        weights=weights,
        k=k,
        forced=forced,
    )
