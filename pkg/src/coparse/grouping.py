"""Per-image superpixel grouping as a multicut with mask incentives.

Edges carry a binary contour dissimilarity d; the objective sums the biased
weight (d - theta) over merged edges and subtracts a reward h for every
propagation mask whose covered superpixels end up in one region. The bias
theta makes contour-free edges favor merging; with the raw weights cutting
everything would always be optimal.

The solver runs the cutting-plane LP over edge merge variables (cycle
inequalities separated lazily, short chordless cycles first), rounds by
connected components, polishes with local merge/move search and, when the
relaxation stays fractional, closes the gap by branching. Instances small
enough for the exhaustive oracle are therefore solved to proven optimality.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from . import kernels
from .core import ImageRecord, Partition, PropagationRecord, superpixel_adjacency
from .errors import InvalidEdgeError, MalformedInputError, OracleTooLargeError

ORACLE_MAX_NODES = 10


@dataclass(frozen=True)
class MulticutInstance:
    node_count: int
    edges: tuple[tuple[int, int, int], ...]                  # (u, v, d) with d in {0, 1}
    mask_constraints: tuple[tuple[frozenset[int], float], ...] = ()

    def __post_init__(self):
        if self.node_count < 1:
            raise MalformedInputError("instance needs at least one node")
        seen = set()
        for u, v, d in self.edges:
            if u == v or not (0 <= u < self.node_count) or not (0 <= v < self.node_count):
                raise MalformedInputError(f"bad edge ({u}, {v})")
            if d not in (0, 1):
                raise MalformedInputError(f"edge dissimilarity must be 0/1, got {d}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise MalformedInputError(f"duplicate edge {key}")
            seen.add(key)
        for ids, h in self.mask_constraints:
            if len(ids) < 2:
                raise MalformedInputError("mask constraint needs >= 2 superpixels")
            if h < 0:
                raise MalformedInputError("mask reward must be non-negative")
            for i in ids:
                if not 0 <= i < self.node_count:
                    raise MalformedInputError(f"mask id {i} out of range")


@dataclass(frozen=True)
class MulticutSolution:
    partition: Partition
    objective: float
    mask_active: tuple[bool, ...]


def objective_of(instance: MulticutInstance, assignment: np.ndarray, theta: float) -> float:
    """Biased objective of a concrete partition, recomputed from scratch."""
    obj = 0.0
    for u, v, d in instance.edges:
        if assignment[u] == assignment[v]:
            obj += d - theta
    for ids, h in instance.mask_constraints:
        vals = {int(assignment[i]) for i in ids}
        if len(vals) == 1:
            obj -= h
    return obj


def _mask_active(instance: MulticutInstance, assignment: np.ndarray) -> tuple[bool, ...]:
    out = []
    for ids, _ in instance.mask_constraints:
        vals = {int(assignment[i]) for i in ids}
        out.append(len(vals) == 1)
    return tuple(out)


# ---------------------------------------------------------------------------
# Contour dissimilarity and mask coverage
# ---------------------------------------------------------------------------

def edge_dissimilarity(image: ImageRecord, u: int, v: int) -> int:
    """1 iff a contour pixel lies on the shared boundary of u and v."""
    pairs, flags = superpixel_adjacency(image.superpixel_map, image.contour_map)
    key = (min(u, v), max(u, v))
    idx = np.flatnonzero((pairs[:, 0] == key[0]) & (pairs[:, 1] == key[1]))
    if idx.size == 0:
        raise InvalidEdgeError(f"superpixels {u} and {v} are not 4-adjacent")
    return int(flags[idx[0]])


def covered_superpixels(image: ImageRecord, mask: np.ndarray, x: int, y: int) -> list[int]:
    """Superpixels with at least half their pixels under the placed mask."""
    mh, mw = mask.shape
    spmap = image.superpixel_map
    m = int(spmap.max()) + 1
    window = spmap[y:y + mh, x:x + mw]
    if window.shape != (mh, mw):
        raise MalformedInputError("mask placed outside image bounds")
    under = np.bincount(window[np.asarray(mask, dtype=bool)], minlength=m)
    counts = np.bincount(spmap.ravel(), minlength=m)
    return [int(i) for i in np.flatnonzero(2 * under >= counts)]


def mask_consistency(image: ImageRecord, covered: set[int] | list[int]) -> float:
    """Normalized total area of the covered superpixels."""
    ids = sorted(set(int(i) for i in covered))
    if not ids:
        return 0.0
    spmap = image.superpixel_map
    counts = np.bincount(spmap.ravel(), minlength=int(spmap.max()) + 1)
    return float(sum(counts[i] for i in ids)) / spmap.size


def instance_for_image(image: ImageRecord,
                       propagations: list[PropagationRecord]) -> MulticutInstance:
    """Assemble the per-image grouping instance from contours and masks."""
    pairs, dflags = superpixel_adjacency(image.superpixel_map, image.contour_map)
    edges = tuple((int(u), int(v), int(d)) for (u, v), d in zip(pairs, dflags))
    masks = []
    for prop in propagations:
        covered = covered_superpixels(image, prop.mask, prop.x, prop.y)
        if len(covered) >= 2:
            masks.append((frozenset(covered), mask_consistency(image, covered)))
    return MulticutInstance(node_count=int(image.superpixel_map.max()) + 1,
                            edges=edges, mask_constraints=tuple(masks))


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------

def brute_force_multicut(instance: MulticutInstance, theta: float) -> MulticutSolution:
    """Exact optimum by scanning every set partition (node_count <= 10)."""
    n = instance.node_count
    if n > ORACLE_MAX_NODES:
        raise OracleTooLargeError(f"{n} nodes exceeds the oracle cap of {ORACLE_MAX_NODES}")
    edges = instance.edges
    eu = np.array([e[0] for e in edges], dtype=np.int64)
    ev = np.array([e[1] for e in edges], dtype=np.int64)
    ew = np.array([e[2] - theta for e in edges], dtype=np.float64)
    mask_ids = []
    mask_ptr = [0]
    mask_h = []
    for ids, h in instance.mask_constraints:
        mask_ids.extend(sorted(ids))
        mask_ptr.append(len(mask_ids))
        mask_h.append(h)
    _, best_a = kernels.multicut_enumerate(
        n, eu, ev, ew,
        np.array(mask_ptr, dtype=np.int64),
        np.array(mask_ids, dtype=np.int64),
        np.array(mask_h, dtype=np.float64))
    partition = Partition.from_assignment(best_a)
    return MulticutSolution(
        partition=partition,
        objective=objective_of(instance, partition.assignment, theta),
        mask_active=_mask_active(instance, partition.assignment))


# ---------------------------------------------------------------------------
# Cutting-plane solver with branch-and-cut closure
# ---------------------------------------------------------------------------

class _MulticutSolver:
    INTEGRALITY_TOL = 1e-6
    SEPARATION_TOL = 1e-7
    PRUNE_SLACK = 1e-8

    def __init__(self, instance: MulticutInstance, theta: float,
                 node_cap: int = 500, root_rounds: int = 50, child_rounds: int = 10):
        self.instance = instance
        self.theta = theta
        self.node_cap = node_cap
        self.root_rounds = root_rounds
        self.child_rounds = child_rounds
        n = instance.node_count

        self.pair_index: dict[tuple[int, int], int] = {}
        self.pairs: list[tuple[int, int]] = []
        weights = []
        for u, v, d in instance.edges:
            key = (min(u, v), max(u, v))
            self.pair_index[key] = len(self.pairs)
            self.pairs.append(key)
            weights.append(d - theta)
        # auxiliary merge variables so a mask reward can require joint grouping
        for ids, _ in instance.mask_constraints:
            ordered = sorted(ids)
            for i, a in enumerate(ordered):
                for b in ordered[i + 1:]:
                    key = (a, b)
                    if key not in self.pair_index:
                        self.pair_index[key] = len(self.pairs)
                        self.pairs.append(key)
                        weights.append(0.0)
        self.n_pairs = len(self.pairs)
        self.n_masks = len(instance.mask_constraints)
        self.cost = np.concatenate([
            np.asarray(weights, dtype=np.float64),
            -np.array([h for _, h in instance.mask_constraints], dtype=np.float64),
        ]) if self.n_masks else np.asarray(weights, dtype=np.float64)

        self.rows: list[tuple[np.ndarray, np.ndarray, float]] = []
        self._row_keys: set = set()
        for ci, (ids, _) in enumerate(instance.mask_constraints):
            ordered = sorted(ids)
            for i, a in enumerate(ordered):
                for b in ordered[i + 1:]:
                    cols = np.array([self.n_pairs + ci, self.pair_index[(a, b)]])
                    self.rows.append((cols, np.array([1.0, -1.0]), 0.0))

        self.adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for idx, (u, v) in enumerate(self.pairs):
            self.adj[u].append((v, idx))
            self.adj[v].append((u, idx))

        eu, ev, ew = [], [], []
        for u, v, d in instance.edges:
            eu.append(u)
            ev.append(v)
            ew.append(d - theta)
        self._eu = np.array(eu, dtype=np.int64)
        self._ev = np.array(ev, dtype=np.int64)
        self._ew = np.array(ew, dtype=np.float64)
        self._mask_sets = [np.fromiter(sorted(ids), dtype=np.int64)
                           for ids, _ in instance.mask_constraints]
        self._mask_h = np.array([h for _, h in instance.mask_constraints], dtype=np.float64)
        self._triangles, self._quads = self._enumerate_short_cycles()

    def _enumerate_short_cycles(self):
        """Chordless cycles of length 3 and 4 as var-index arrays, found once."""
        neighbor = [dict(self.adj[u]) for u in range(self.instance.node_count)]
        triangles = []
        quads = []
        for e_idx, (u, v) in enumerate(self.pairs):
            for w, e_uw in self.adj[u]:
                if w == v or w < v:
                    continue
                e_vw = neighbor[v].get(w)
                if e_vw is not None:
                    triangles.append((e_idx, e_uw, e_vw))
            for a, e_ua in self.adj[u]:
                if a == v or a in neighbor[v]:
                    continue
                for b, e_vb in self.adj[v]:
                    if b == u or b == a or b in neighbor[u]:
                        continue
                    e_ab = neighbor[a].get(b)
                    if e_ab is not None and (u, v) < tuple(sorted((a, b))):
                        quads.append((e_idx, e_ua, e_ab, e_vb))
        tri = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        quad = np.array(quads, dtype=np.int64).reshape(-1, 4)
        return tri, quad

    # -- objective over concrete assignments --------------------------------

    def _objective(self, assign: np.ndarray) -> float:
        obj = float(self._ew[assign[self._eu] == assign[self._ev]].sum())
        for ids, h in zip(self._mask_sets, self._mask_h):
            vals = assign[ids]
            if (vals == vals[0]).all():
                obj -= h
        return obj

    # -- LP ------------------------------------------------------------------

    def _solve_lp(self, fixed: dict[int, int]):
        n_vars = self.n_pairs + self.n_masks
        bounds = [(0.0, 1.0)] * n_vars
        for var, val in fixed.items():
            bounds[var] = (float(val), float(val))
        if self.rows:
            data, rows_i, cols_i, rhs = [], [], [], []
            for ri, (cols, coefs, b) in enumerate(self.rows):
                rows_i.extend([ri] * len(cols))
                cols_i.extend(cols.tolist())
                data.extend(coefs.tolist())
                rhs.append(b)
            a_ub = sparse.csr_matrix((data, (rows_i, cols_i)),
                                     shape=(len(self.rows), n_vars))
            res = linprog(self.cost, A_ub=a_ub, b_ub=np.asarray(rhs),
                          bounds=bounds, method="highs")
        else:
            res = linprog(self.cost, bounds=bounds, method="highs")
        if res.status == 2:
            return None
        if res.status != 0:
            raise RuntimeError(f"LP solver failed with status {res.status}")
        return float(res.fun), np.asarray(res.x)

    # -- separation ----------------------------------------------------------

    def _add_row(self, chosen: int, others: list[int]) -> bool:
        key = (chosen, frozenset(others))
        if key in self._row_keys:
            return False
        self._row_keys.add(key)
        cols = np.array([chosen] + list(others))
        coefs = np.array([-1.0] + [1.0] * len(others))
        self.rows.append((cols, coefs, float(len(others) - 1)))
        return True

    def _separate(self, x: np.ndarray) -> int:
        added = self._separate_short_cycles(x)
        if added:
            return added
        return self._separate_paths(x)

    def _separate_short_cycles(self, x: np.ndarray) -> int:
        added = 0
        tol = self.SEPARATION_TOL
        for cycles, rhs in ((self._triangles, 1.0), (self._quads, 2.0)):
            if cycles.size == 0:
                continue
            vals = x[cycles]
            totals = vals.sum(axis=1)
            # chosen edge e violates when sum(others) - x_e > len - 2
            viol = totals[:, None] - 2.0 * vals > rhs + tol
            for row, col in zip(*np.nonzero(viol)):
                chosen = int(cycles[row, col])
                others = [int(c) for j, c in enumerate(cycles[row]) if j != col]
                if self._add_row(chosen, others):
                    added += 1
        return added

    def _separate_paths(self, x: np.ndarray) -> int:
        """Shortest-cycle separation: cut weight of an edge vs. the cheapest
        detour in cut weights y = 1 - x."""
        added = 0
        tol = self.SEPARATION_TOL
        y = np.clip(1.0 - x[:self.n_pairs], 0.0, None)
        for e_idx, (src, dst) in enumerate(self.pairs):
            if y[e_idx] <= tol:
                continue
            dist, prev = self._dijkstra(src, dst, skip_var=e_idx, weights=y,
                                        limit=y[e_idx] - tol)
            if dist is None:
                continue
            path_vars = []
            node = dst
            while node != src:
                pnode, pvar = prev[node]
                path_vars.append(pvar)
                node = pnode
            if self._add_row(e_idx, path_vars):
                added += 1
            if added >= 50:
                break
        return added

    def _dijkstra(self, src: int, dst: int, skip_var: int, weights: np.ndarray,
                  limit: float):
        dist = {src: 0.0}
        prev: dict[int, tuple[int, int]] = {}
        heap = [(0.0, src)]
        while heap:
            d, node = heapq.heappop(heap)
            if d > dist.get(node, np.inf):
                continue
            if node == dst:
                return (d, prev) if d < limit else (None, None)
            for nbr, var in self.adj[node]:
                if var == skip_var:
                    continue
                nd = d + weights[var]
                if nd >= limit:
                    continue
                if nd < dist.get(nbr, np.inf) - 1e-15:
                    dist[nbr] = nd
                    prev[nbr] = (node, var)
                    heapq.heappush(heap, (nd, nbr))
        return None, None

    # -- rounding + local search ---------------------------------------------

    def _round(self, x: np.ndarray) -> np.ndarray:
        n = self.instance.node_count
        parent = np.arange(n)

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for idx, (u, v) in enumerate(self.pairs):
            if x[idx] >= 0.5:
                ru, rv = find(u), find(v)
                if ru != rv:
                    parent[max(ru, rv)] = min(ru, rv)
        return Partition.from_assignment([find(i) for i in range(n)]).assignment.copy()

    def _local_improve(self, assign: np.ndarray) -> np.ndarray:
        assign = assign.copy()
        best = self._objective(assign)
        neighbor_regions: set[tuple[int, int]] = set()
        for _ in range(100):
            improved = False
            # merge two touching regions
            neighbor_regions.clear()
            for u, v in self.pairs:
                a, b = int(assign[u]), int(assign[v])
                if a != b:
                    neighbor_regions.add((min(a, b), max(a, b)))
            best_delta, best_move = -1e-12, None
            for a, b in sorted(neighbor_regions):
                trial = assign.copy()
                trial[trial == b] = a
                delta = self._objective(trial) - best
                if delta < best_delta:
                    best_delta, best_move = delta, trial
            if best_move is not None:
                assign = Partition.from_assignment(best_move).assignment.copy()
                best = self._objective(assign)
                improved = True
                continue
            # move one node to a touching region or to a fresh singleton
            for node in range(self.instance.node_count):
                options = sorted({int(assign[nbr]) for nbr, _ in self.adj[node]}
                                 - {int(assign[node])})
                options.append(int(assign.max()) + 1)
                for target in options:
                    trial = assign.copy()
                    trial[node] = target
                    trial_obj = self._objective(trial)
                    if trial_obj < best - 1e-12:
                        assign = Partition.from_assignment(trial).assignment.copy()
                        best = trial_obj
                        improved = True
                        break
                if improved:
                    break
            if not improved:
                break
        return assign

    # -- branch and cut --------------------------------------------------------

    def solve(self) -> tuple[np.ndarray, float]:
        best_assign: np.ndarray | None = None
        best_obj = np.inf
        stack: list[dict[int, int]] = [{}]
        explored = 0
        while stack and explored < self.node_cap:
            fixed = stack.pop()
            explored += 1
            rounds = self.root_rounds if explored == 1 else self.child_rounds
            lp = self._solve_lp(fixed)
            if lp is None:
                continue
            obj, x = lp
            for _ in range(rounds):
                if self._separate(x) == 0:
                    break
                lp = self._solve_lp(fixed)
                if lp is None:
                    break
                obj, x = lp
            if lp is None:
                continue
            cand = self._local_improve(self._round(x))
            cand_obj = self._objective(cand)
            if cand_obj < best_obj - 1e-12:
                best_obj, best_assign = cand_obj, cand
            if obj >= best_obj + self.PRUNE_SLACK:
                continue
            frac = np.abs(x[:self.n_pairs] - 0.5)
            order = np.argsort(frac, kind="stable")
            branch_var = None
            for idx in order:
                if frac[idx] < 0.5 - self.INTEGRALITY_TOL and int(idx) not in fixed:
                    branch_var = int(idx)
                    break
            if branch_var is None:
                continue  # integral and cycle-consistent: node fully solved
            hi_first = x[branch_var] >= 0.5
            first, second = (1, 0) if hi_first else (0, 1)
            stack.append({**fixed, branch_var: second})
            stack.append({**fixed, branch_var: first})
        if best_assign is None:
            best_assign = self._local_improve(
                np.zeros(self.instance.node_count, dtype=np.int64))
            best_obj = self._objective(best_assign)
        return best_assign, best_obj


def solve_multicut(instance: MulticutInstance, theta: float = 0.5) -> MulticutSolution:
    """Minimize the biased grouping objective over partition-consistent labelings."""
    if not 0.0 < theta < 1.0:
        raise MalformedInputError(f"merge bias theta must lie in (0, 1), got {theta}")
    if not isinstance(instance, MulticutInstance):
        raise MalformedInputError("expected a MulticutInstance")
    solver = _MulticutSolver(instance, theta)
    assign, _ = solver.solve()
    partition = Partition.from_assignment(assign)
    return MulticutSolution(
        partition=partition,
        objective=objective_of(instance, partition.assignment, theta),
        mask_active=_mask_active(instance, partition.assignment))
