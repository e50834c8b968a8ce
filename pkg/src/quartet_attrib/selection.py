"""Iterative conditional minimization of BIC over feature subsets.

Each restart sweeps the columns in an independent random order, tentatively
adding absent features and removing present ones, accepting any move that
strictly lowers the BIC; a restart stops once two consecutive sweeps make
no change.  The best restart (lowest BIC, ties to the lowest restart index)
wins.  Results are deterministic given (matrix, y, prior, restarts, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import glm
from .features import FeatureMatrix

#: A move must beat the current BIC by more than this to be accepted,
#: preventing oscillation on floating-point ties.
ACCEPT_TOL = 1e-9


@dataclass(frozen=True)
class TraceEntry:
    restart: int
    sweep: int
    feature: str
    action: str  # "add" or "remove"
    bic_before: float
    bic_after: float


@dataclass
class SelectionResult:
    selected: tuple[str, ...]  # in matrix column order
    bic: float
    restart_index: int
    orderings_seed: int
    passes: int
    model: glm.FittedModel
    restart_bics: tuple[float, ...]
    trace: tuple[TraceEntry, ...] | None = None

    def to_json(self) -> dict:
        out = {
            "selected": list(self.selected),
            "bic": self.bic,
            "restart_index": self.restart_index,
            "orderings_seed": self.orderings_seed,
            "passes": self.passes,
            "restart_bics": list(self.restart_bics),
            "model": self.model.to_json(),
        }
        if self.trace is not None:
            out["trace"] = [
                {
                    "restart": t.restart,
                    "sweep": t.sweep,
                    "feature": t.feature,
                    "action": t.action,
                    "bic_before": t.bic_before,
                    "bic_after": t.bic_after,
                }
                for t in self.trace
            ]
        return out


def selection_trace(result: SelectionResult) -> tuple[TraceEntry, ...]:
    """Accepted-move log of the winning restart (run icm_select with trace=True)."""
    if result.trace is None:
        raise ValueError("selection was run without tracing enabled")
    return result.trace


def replay_trace(trace: Sequence[TraceEntry]) -> tuple[str, ...]:
    """Reapply a restart's accepted moves; returns the final selected set."""
    current: list[str] = []
    for entry in trace:
        if entry.action == "add":
            current.append(entry.feature)
        else:
            current.remove(entry.feature)
    return tuple(sorted(current))


def _as_array(matrix) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(matrix, FeatureMatrix):
        return matrix.values, matrix.labels
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2:
        raise ValueError("matrix must be 2-D")
    return X, tuple(f"x{j}" for j in range(X.shape[1]))


def icm_select(
    matrix,
    y,
    prior: glm.PriorConfig = glm.PriorConfig(),
    restarts: int = 10,
    seed: int = 0,
    bic_form: str = "paper",
    trace: bool = False,
    redraw_each_pass: bool = False,
) -> SelectionResult:
    """Random-order coordinate search for the lowest-BIC feature subset.

    matrix is a FeatureMatrix (already variance-filtered) or a plain 2-D
    array.  Candidate fits are warm-started from the current model; the
    winning subset is refit cold so the reported BIC is recomputable.
    An empty selection (intercept-only model) is a legal outcome.
    """
    X, labels = _as_array(matrix)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n != len(y):
        raise ValueError("matrix and y disagree on n")
    if restarts < 1:
        raise ValueError("need at least one restart")

    best_key: tuple[float, int] | None = None
    best_state: dict | None = None
    restart_bics: list[float] = []

    for k in range(restarts):
        rng = np.random.default_rng([seed, k])
        order = rng.permutation(p)
        selected: set[int] = set()
        current_bic = float("inf")
        current_model: glm.FittedModel | None = None
        cache: dict[tuple[int, ...], float] = {}
        entries: list[TraceEntry] = []
        sweeps = 0
        quiet = 0

        while quiet < 2:
            sweeps += 1
            changed = False
            if redraw_each_pass and sweeps > 1:
                order = rng.permutation(p)
            for j in order:
                cand = selected | {j} if j not in selected else selected - {j}
                key = tuple(sorted(cand))
                cand_bic = cache.get(key)
                cand_model = None
                if cand_bic is None:
                    cand_model = _fit_subset(X, y, labels, key, prior, current_model)
                    cand_bic = glm.bic(cand_model, form=bic_form)
                    cache[key] = cand_bic
                if cand_bic < current_bic - ACCEPT_TOL:
                    action = "add" if j not in selected else "remove"
                    if trace:
                        entries.append(
                            TraceEntry(
                                restart=k,
                                sweep=sweeps,
                                feature=labels[j],
                                action=action,
                                bic_before=current_bic,
                                bic_after=cand_bic,
                            )
                        )
                    selected = cand
                    current_bic = cand_bic
                    if cand_model is None:
                        cand_model = _fit_subset(X, y, labels, key, prior, current_model)
                    current_model = cand_model
                    changed = True
            quiet = 0 if changed else quiet + 1

        # cold refit so the reported BIC is reproducible from the subset alone
        final_cols = tuple(sorted(selected))
        final_model = _fit_subset(X, y, labels, final_cols, prior, None)
        final_bic = glm.bic(final_model, form=bic_form)
        restart_bics.append(final_bic)
        key = (final_bic, k)
        if best_key is None or key < best_key:
            best_key = key
            best_state = {
                "cols": final_cols,
                "model": final_model,
                "bic": final_bic,
                "restart": k,
                "passes": sweeps,
                "trace": tuple(entries) if trace else None,
            }

    assert best_state is not None
    return SelectionResult(
        selected=tuple(labels[j] for j in best_state["cols"]),
        bic=best_state["bic"],
        restart_index=best_state["restart"],
        orderings_seed=seed,
        passes=best_state["passes"],
        model=best_state["model"],
        restart_bics=tuple(restart_bics),
        trace=best_state["trace"],
    )


def _fit_subset(
    X: np.ndarray,
    y: np.ndarray,
    labels: tuple[str, ...],
    cols: tuple[int, ...],
    prior: glm.PriorConfig,
    warm: glm.FittedModel | None,
) -> glm.FittedModel:
    names = tuple(labels[j] for j in cols)
    start = None
    if warm is not None:
        prev = dict(zip(warm.feature_names, warm.coef))
        start = np.array([warm.intercept] + [prev.get(nm, 0.0) for nm in names])
    return glm.fit(X[:, cols], y, prior=prior, feature_names=names, start=start)
