"""Small mixed-integer LP solver: branch and bound over an LP core.

LP relaxations are solved by HiGHS (dual simplex). One HiGHS model is kept
for the whole search; nodes only change column bounds, so each re-solve
starts from the previous basis.

Search order is best-bound with plunging: after branching, the solver
dives into the more promising child until that path is pruned or integral,
then resumes from the best open node. Diving finds incumbents early, which
matters when many nodes share the same bound.

Some plants (slow-ramping boilers with start-up allowances) have weak
relaxations that plain branching cannot close quickly. ``solve_milp`` gives
the hand-rolled search a node budget and hands over to the HiGHS MIP
solver, which adds presolve and cutting planes, when the budget runs out.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass

import highspy
import numpy as np
from scipy import sparse

from ptxsched.errors import SolverError

logger = logging.getLogger(__name__)

INT_TOL = 1e-6
NODE_BUDGET = 500


class NodeLimitReached(SolverError):
    pass


@dataclass
class MILP:
    """``min c @ x`` s.t. ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq``, ``lb <= x <= ub``."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray  # bool mask


@dataclass
class MILPResult:
    x: np.ndarray
    objective: float
    nodes: int


class LPCore:
    """A HiGHS LP whose column bounds can be changed between solves."""

    def __init__(self, p: MILP) -> None:
        n = p.c.size
        A = sparse.vstack(
            [sparse.csc_matrix(p.A_ub.reshape(-1, n)), sparse.csc_matrix(p.A_eq.reshape(-1, n))]
        ).tocsc()
        lp = highspy.HighsLp()
        lp.num_col_ = n
        lp.num_row_ = A.shape[0]
        lp.col_cost_ = np.asarray(p.c, dtype=float)
        lp.col_lower_ = np.asarray(p.lb, dtype=float)
        lp.col_upper_ = np.asarray(p.ub, dtype=float)
        lp.row_lower_ = np.concatenate([np.full(p.b_ub.size, -highspy.kHighsInf), p.b_eq])
        lp.row_upper_ = np.concatenate([p.b_ub, p.b_eq])
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = A.indptr
        lp.a_matrix_.index_ = A.indices
        lp.a_matrix_.value_ = A.data
        self.n = n
        self._all = np.arange(n, dtype=np.int32)
        self.h = highspy.Highs()
        self.h.setOptionValue("output_flag", False)
        self.h.setOptionValue("primal_feasibility_tolerance", 1e-9)
        self.h.setOptionValue("dual_feasibility_tolerance", 1e-9)
        self.h.passModel(lp)

    def solve(self, lb: np.ndarray, ub: np.ndarray) -> tuple[np.ndarray, float] | None:
        """Optimum under the given bounds, or ``None`` if infeasible."""
        if np.any(lb > ub + 1e-12):
            return None
        self.h.changeColsBounds(self.n, self._all, lb, ub)
        self.h.run()
        status = self.h.getModelStatus()
        if status == highspy.HighsModelStatus.kOptimal:
            x = np.array(self.h.getSolution().col_value)
            return x, float(self.h.getInfo().objective_function_value)
        if status == highspy.HighsModelStatus.kInfeasible:
            return None
        # a stale basis occasionally confuses the solver; retry cold
        self.h.clearSolver()
        self.h.run()
        status = self.h.getModelStatus()
        if status == highspy.HighsModelStatus.kOptimal:
            x = np.array(self.h.getSolution().col_value)
            return x, float(self.h.getInfo().objective_function_value)
        if status == highspy.HighsModelStatus.kInfeasible:
            return None
        raise SolverError(f"LP solve failed: {self.h.modelStatusToString(status)}")


def solve_lp(p: MILP, lb: np.ndarray | None = None, ub: np.ndarray | None = None):
    """One-off LP relaxation of ``p``."""
    core = LPCore(p)
    return core.solve(p.lb if lb is None else lb, p.ub if ub is None else ub)


def branch_and_bound(p: MILP, *, gap: float = 1e-10, max_nodes: int = 100_000) -> MILPResult | None:
    """Exact optimum of ``p`` or ``None`` if it has no integer-feasible point.

    The branching variable is the most fractional integer column.
    """
    core = LPCore(p)
    lb0 = np.asarray(p.lb, dtype=float).copy()
    ub0 = np.asarray(p.ub, dtype=float).copy()
    int_idx = np.flatnonzero(p.integer)
    lb0[int_idx] = np.ceil(lb0[int_idx] - INT_TOL)
    ub0[int_idx] = np.floor(ub0[int_idx] + INT_TOL)

    root = core.solve(lb0, ub0)
    if root is None:
        return None
    best_x, best_obj = None, np.inf

    def cutoff() -> float:
        return best_obj - gap * max(1.0, abs(best_obj)) if best_x is not None else np.inf

    counter = itertools.count()
    heap: list = []
    node = (root[1], lb0, ub0, root[0])
    nodes = 0
    while True:
        if node is None:
            if not heap:
                break
            bound, _, lb, ub, x = heapq.heappop(heap)
            node = (bound, lb, ub, x)
        bound, lb, ub, x = node
        node = None
        if bound >= cutoff():
            continue
        nodes += 1
        if nodes > max_nodes:
            raise NodeLimitReached(f"branch and bound exceeded {max_nodes} nodes")

        frac = np.abs(x[int_idx] - np.round(x[int_idx]))
        if int_idx.size == 0 or frac.max() <= INT_TOL:
            best_x, best_obj = x, bound
            continue
        j = int_idx[int(np.argmax(frac))]
        children = []
        for lo, hi in ((lb[j], np.floor(x[j])), (np.ceil(x[j]), ub[j])):
            clb, cub = lb.copy(), ub.copy()
            clb[j], cub[j] = lo, hi
            child = core.solve(clb, cub)
            if child is not None and child[1] < cutoff():
                children.append((child[1], clb, cub, child[0]))
        if children:
            children.sort(key=lambda c: c[0])
            node = children[0]
            for c in children[1:]:
                heapq.heappush(heap, (c[0], next(counter), c[1], c[2], c[3]))

    if best_x is None:
        return None
    logger.debug("branch and bound: %d nodes, objective %.12g", nodes, best_obj)
    return _polish(core, lb0, ub0, int_idx, best_x, best_obj, nodes)


def _polish(core, lb0, ub0, int_idx, x, obj, nodes) -> MILPResult:
    """Pin integers to exact values and re-solve the continuous part."""
    lb, ub = lb0.copy(), ub0.copy()
    fixed = np.round(x[int_idx])
    lb[int_idx] = ub[int_idx] = fixed
    polished = core.solve(lb, ub)
    if polished is not None:
        x, obj = polished
        x[int_idx] = fixed
    return MILPResult(x, obj, nodes)


def highs_mip(p: MILP) -> MILPResult | None:
    """Solve ``p`` with the HiGHS MIP solver (tight gap), polished like ``branch_and_bound``."""
    core = LPCore(p)
    h = core.h
    h.changeColsIntegrality(core.n, core._all, np.where(p.integer, 1, 0).astype(np.uint8))
    h.setOptionValue("mip_rel_gap", 1e-10)
    h.setOptionValue("mip_abs_gap", 1e-12)
    h.setOptionValue("random_seed", 0)
    h.run()
    status = h.getModelStatus()
    if status == highspy.HighsModelStatus.kInfeasible:
        return None
    if status != highspy.HighsModelStatus.kOptimal:
        raise SolverError(f"MIP solve failed: {h.modelStatusToString(status)}")
    x = np.array(h.getSolution().col_value)
    nodes = int(h.getInfo().mip_node_count)
    # polish on a plain LP copy
    lp = LPCore(p)
    int_idx = np.flatnonzero(p.integer)
    return _polish(lp, np.asarray(p.lb, float), np.asarray(p.ub, float), int_idx, x, float(p.c @ x), nodes)


def solve_milp(p: MILP, *, node_budget: int = NODE_BUDGET) -> MILPResult | None:
    """Exact optimum of ``p``: own branch and bound first, HiGHS MIP if it stalls."""
    try:
        return branch_and_bound(p, max_nodes=node_budget)
    except NodeLimitReached:
        logger.debug("node budget of %d exhausted; switching to HiGHS MIP", node_budget)
        return highs_mip(p)
