"""Cross-validated rating-prediction evaluation, error metrics and significance tests."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from os import PathLike
from typing import Mapping, Sequence

import numpy as np

from .systems import SystemConfig, build_system
from .dataset import Dataset
from .errors import ValidationError
from .preprocess import ClusterAssignment

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignment: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def make_folds(d: Dataset | int, k: int = 5, seed: int = 0, stratify: str | None = None) -> FoldPlan:
    """Random partition of observations into ``k`` folds whose sizes differ by at most one.

    With ``stratify="user"`` (or ``"item"``), observations are dealt to folds
    entity by entity so each entity's ratings spread across folds.
    """
    n = d if isinstance(d, int) else len(d)
    if k < 2 or k > n:
        raise ValidationError(f"fold count {k} must be in [2, {n}]")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    if stratify is not None:
        if isinstance(d, int):
            raise ValidationError("stratified folds need a dataset")
        if stratify not in ("user", "item"):
            raise ValidationError(f"cannot stratify by {stratify!r}")
        owner = (d.user_idx if stratify == "user" else d.item_idx)[order]
        order = order[np.argsort(owner, kind="stable")]
    assignment = np.empty(n, dtype=np.intp)
    assignment[order] = np.arange(n) % k
    return FoldPlan(k, seed, assignment)


def mae(errors: Sequence[float]) -> float:
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValidationError("MAE of an empty error list")
    return float(np.mean(np.abs(e)))


def rmse(errors: Sequence[float]) -> float:
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValidationError("RMSE of an empty error list")
    return float(np.sqrt(np.mean(e * e)))


# -- Wilcoxon signed-rank ---------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    w_plus: float
    w_minus: float
    n: int
    p_value: float
    significant: bool
    inconclusive: bool
    better: str | None


def midranks(x: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties sharing their average rank."""
    x = np.asarray(x)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    start = 0
    for end in range(1, len(x) + 1):
        if end == len(x) or xs[end] != xs[start]:
            ranks[order[start:end]] = 0.5 * (start + 1 + end)
            start = end
    return ranks


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    """Two-sided p-value from the exact null distribution of W+ (ranks may be half-integers)."""
    twice = np.rint(2 * ranks).astype(np.int64)
    total = int(twice.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in twice:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    probs = counts / counts.sum()
    w = int(round(2 * w_plus))
    lower = probs[: w + 1].sum()
    upper = probs[w:].sum()
    return float(min(1.0, 2 * min(lower, upper)))


def wilcoxon_signed_rank(
    errors_a: Sequence[float], errors_b: Sequence[float], alpha: float = 0.05, exact_max_n: int = 25
) -> WilcoxonResult:
    """Two-sided paired signed-rank test on ``errors_a - errors_b``.

    Zero differences are dropped. Up to ``exact_max_n`` remaining pairs the
    p-value comes from the exact permutation distribution; above that, from
    the normal approximation with tie correction. Fewer than 10 nonzero
    differences give an inconclusive result. ``better`` names the sample
    with the smaller errors.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("paired samples must have equal length")
    diff = a - b
    diff = diff[diff != 0]
    n = len(diff)
    if n == 0:
        return WilcoxonResult(0.0, 0.0, 0.0, 0, float("nan"), False, True, None)
    ranks = midranks(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    stat = min(w_plus, w_minus)
    better = None if w_plus == w_minus else ("a" if w_plus < w_minus else "b")
    if n < 10:
        return WilcoxonResult(stat, w_plus, w_minus, n, float("nan"), False, True, better)
    if n <= exact_max_n:
        p = _exact_p(ranks, w_plus)
    else:
        _, tie_counts = np.unique(np.abs(diff), return_counts=True)
        mean = n * (n + 1) / 4
        var = n * (n + 1) * (2 * n + 1) / 24 - (tie_counts ** 3 - tie_counts).sum() / 48
        z = (w_plus - mean) / math.sqrt(var) if var > 0 else 0.0
        p = math.erfc(abs(z) / math.sqrt(2))
    return WilcoxonResult(stat, w_plus, w_minus, n, p, p < alpha, False, better)


# -- experiment runner -------------------------------------------------------

@dataclass
class EvalReport:
    system: str
    fold_mae: list[float] = field(default_factory=list)
    fold_rmse: list[float] = field(default_factory=list)
    fold_ids: list[tuple[int, int]] = field(default_factory=list)
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    predictions: np.ndarray = field(default_factory=lambda: np.zeros(0))
    observations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    fallbacks: int = 0
    runtime: float = 0.0
    failure: str | None = None

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.fold_mae))

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.fold_rmse))

    @property
    def abs_errors(self) -> np.ndarray:
        return np.abs(self.errors)

    def repetition_mae(self) -> list[float]:
        """Mean of fold MAEs within each repetition."""
        reps = sorted({r for r, _ in self.fold_ids})
        return [float(np.mean([m for (r, _), m in zip(self.fold_ids, self.fold_mae) if r == rep])) for rep in reps]


@dataclass
class _FoldResult:
    system: int
    rep: int
    fold: int
    test: np.ndarray
    predictions: np.ndarray
    fallbacks: int
    seconds: float


def _evaluate_fold(d, cfg, sys_pos, rep, fold, plan, clusters, shared) -> _FoldResult:
    t0 = time.perf_counter()
    train_idx = plan.train_indices(fold)
    test_idx = plan.test_indices(fold)
    train = d.subset(train_idx)
    test = d.subset(test_idx)
    try:
        system = build_system(cfg, clusters, shared.setdefault((rep, fold), {}))
        system.fit(train)
        preds = system.predict(test)
    except Exception as exc:
        raise RuntimeError(f"system {cfg.name!r} failed on repetition {rep}, fold {fold}: {exc}") from exc
    return _FoldResult(sys_pos, rep, fold, test_idx, preds, system.fallbacks, time.perf_counter() - t0)


def run_experiment(
    d: Dataset,
    systems: Sequence[SystemConfig],
    fold_plan: FoldPlan | Sequence[FoldPlan],
    clusters: Mapping[str, ClusterAssignment] | None = None,
    workers: int = 1,
    keep_going: bool = False,
) -> list[EvalReport]:
    """Evaluate every system on every fold of every plan.

    Each system is trained on the other folds and predicts each held-out
    rating in its recorded situation. All systems share the same plans.
    Passing several plans averages over repetitions. With ``keep_going`` a
    failing system gets its ``failure`` message set instead of aborting the
    run; its fold results are discarded.
    """
    if not systems:
        raise ValidationError("no systems to evaluate")
    plans = [fold_plan] if isinstance(fold_plan, FoldPlan) else list(fold_plan)
    clusters = dict(clusters or {})
    shared: dict = {}
    tasks = [
        (s, rep, fold, plan)
        for rep, plan in enumerate(plans)
        for fold in range(plan.k)
        for s in range(len(systems))
    ]

    def run(task):
        s, rep, fold, plan = task
        try:
            return _evaluate_fold(d, systems[s], s, rep, fold, plan, clusters, shared)
        except RuntimeError as exc:
            if not keep_going:
                raise
            _log.error("%s", exc)
            return (s, str(exc))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    reports = [EvalReport(cfg.name) for cfg in systems]
    parts: list[list] = [[] for _ in systems]
    for res in results:
        if isinstance(res, tuple):
            if reports[res[0]].failure is None:
                reports[res[0]].failure = res[1]
            continue
        rep = reports[res.system]
        err = res.predictions - d.ratings[res.test]
        rep.fold_ids.append((res.rep, res.fold))
        rep.fold_mae.append(mae(err))
        rep.fold_rmse.append(rmse(err))
        rep.fallbacks += res.fallbacks
        rep.runtime += res.seconds
        parts[res.system].append((res.test, res.predictions, err))
    for rep, chunks in zip(reports, parts):
        if rep.failure is not None or not chunks:
            rep.fold_ids, rep.fold_mae, rep.fold_rmse = [], [], []
            continue
        rep.observations = np.concatenate([c[0] for c in chunks])
        rep.predictions = np.concatenate([c[1] for c in chunks])
        rep.errors = np.concatenate([c[2] for c in chunks])
    return reports


# -- reporting ---------------------------------------------------------------

def improvement(mae_value: float, reference: float) -> float:
    """Relative MAE reduction against ``reference``, in percent."""
    return 100.0 * (reference - mae_value) / reference


def significance_against_best(reports: Sequence[EvalReport], alpha: float = 0.05) -> dict[str, WilcoxonResult]:
    """Pair the lowest-MAE system's absolute errors with every other system's."""
    best = min(reports, key=lambda r: r.mean_mae)
    return {
        r.system: wilcoxon_signed_rank(best.abs_errors, r.abs_errors, alpha)
        for r in reports
        if r is not best
    }


def results_table(
    results: Mapping[str, Sequence[EvalReport]], reference: str | None = "mf", alpha: float = 0.05
) -> tuple[list[str], list[list[str]]]:
    """Header and rows: one row per system, MAE/RMSE (and improvement) columns per dataset.

    A ``*`` after a dataset's best MAE marks it significantly better than
    every other system there.
    """
    datasets = list(results)
    systems: list[str] = []
    for reps in results.values():
        for r in reps:
            if r.system not in systems:
                systems.append(r.system)
    header = ["system"]
    for name in datasets:
        header += [f"{name} MAE", f"{name} RMSE"]
        if reference:
            header.append(f"{name} impr% vs {reference}")
    rows = []
    marks = {}
    for name, reps in results.items():
        if len(reps) > 1:
            sig = significance_against_best(reps, alpha)
            best = min(reps, key=lambda r: r.mean_mae).system
            if all(w.significant and w.better == "a" for w in sig.values()):
                marks[name] = best
    for sysname in systems:
        row = [sysname]
        for name, reps in results.items():
            by = {r.system: r for r in reps}
            r = by.get(sysname)
            if r is None:
                row += ["-", "-"] + (["-"] if reference else [])
                continue
            star = "*" if marks.get(name) == sysname else ""
            row += [f"{r.mean_mae:.4f}{star}", f"{r.mean_rmse:.4f}"]
            if reference:
                ref = by.get(reference)
                row.append(f"{improvement(r.mean_mae, ref.mean_mae):.1f}" if ref else "-")
        rows.append(row)
    return header, rows


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) if j == 0 else str(c).rjust(w) for j, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"


def table_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([[c.rstrip("*") for c in row] for row in rows])
    return buf.getvalue()


def write_fold_csv(path: str | PathLike, results: Mapping[str, Sequence[EvalReport]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["dataset", "system", "repetition", "fold", "mae", "rmse"])
        for name, reps in results.items():
            for r in reps:
                for (rep, fold), m, s in zip(r.fold_ids, r.fold_mae, r.fold_rmse):
                    w.writerow([name, r.system, rep, fold, f"{m:.6f}", f"{s:.6f}"])


def write_significance_csv(path: str | PathLike, results: Mapping[str, Sequence[EvalReport]], alpha: float = 0.05) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["dataset", "best", "other", "n", "statistic", "p_value", "significant", "inconclusive", "better"])
        for name, reps in results.items():
            if len(reps) < 2:
                continue
            best = min(reps, key=lambda r: r.mean_mae).system
            for other, res in significance_against_best(reps, alpha).items():
                better = {"a": best, "b": other}.get(res.better, "")
                w.writerow([name, best, other, res.n, f"{res.statistic:g}", f"{res.p_value:.6g}",
                            res.significant, res.inconclusive, better])


def write_errors_csv(path: str | PathLike, d: Dataset, reports: Sequence[EvalReport]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["system", "observation", "user", "item", "rating", "prediction", "error"])
        for r in reports:
            for t, p, e in zip(r.observations, r.predictions, r.errors):
                w.writerow([r.system, int(t), d.users[d.user_idx[t]], d.items[d.item_idx[t]],
                            f"{d.ratings[t]:g}", f"{p:.6f}", f"{e:.6f}"])
