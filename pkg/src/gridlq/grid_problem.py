"""Problem definition for LQ optimal control of a K x N grid of coupled
linear subsystems, plus generators for the two benchmark families and a
JSON problem-file format.

Grid conventions: subsystem (i, j) sits in row i (0..K-1, "vertical") and
column j (0..N-1, "horizontal"). Direction names follow the grid: the
``west`` coupling matrix multiplies the state of (i, j-1), ``east`` that of
(i, j+1), ``north`` (i-1, j) and ``south`` (i+1, j). Missing neighbours at
the grid edge either couple to a declared boundary trajectory or the block
is simply absent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .block_linalg import dense_cholesky, symmetry_defect
from .errors import NotPositiveDefiniteError

DIRECTIONS = ("west", "east", "north", "south")

# Forward-Euler step shared by both generators.
EULER_STEP = 0.1


@dataclass
class SubsystemData:
    """Per-subsystem dynamics and cost data.

    A, B and the four coupling lists hold one matrix per stage t in 0..T-1;
    Q holds T+1 weights (a terminal weight exists, a terminal input does
    not), R holds T. A coupling attribute is either None (no neighbour
    influence in that direction) or a full list of T matrices whose column
    count matches the neighbour's state dimension.
    """

    n: int
    m: int
    A: list
    B: list
    Q: list
    R: list
    west: list | None = None
    east: list | None = None
    north: list | None = None
    south: list | None = None

    def coupling(self, direction):
        return getattr(self, direction)


@dataclass
class BoundaryData:
    """Boundary trajectories and initial states.

    ``init[i][j]`` is the required initial state of subsystem (i, j).
    ``north[j][t]`` / ``south[j][t]`` are the states of the virtual rows
    above and below the grid, ``west[i][t]`` / ``east[i][t]`` those of the
    virtual columns; each is None when the corresponding edge is unforced.
    Trajectories carry T entries (they only enter the stage updates).
    """

    init: list
    north: list | None = None
    south: list | None = None
    west: list | None = None
    east: list | None = None


@dataclass
class GridLQProblem:
    K: int
    N: int
    T: int
    subsystems: list
    boundary: BoundaryData

    def sub(self, i, j) -> SubsystemData:
        return self.subsystems[i][j]


def _neighbor(i, j, direction):
    return {
        "west": (i, j - 1),
        "east": (i, j + 1),
        "north": (i - 1, j),
        "south": (i + 1, j),
    }[direction]


def _boundary_signal(boundary, direction, i, j):
    """Boundary trajectory seen by (i, j) looking off-grid in `direction`."""
    traj = getattr(boundary, direction)
    if traj is None:
        return None
    idx = j if direction in ("north", "south") else i
    return traj[idx]


class GridLayout:
    """Index map for the stacked state/input vectors.

    States stack column-major inside a stage (all rows of column 0, then
    column 1, ...), and stages stack in time: the full state vector has
    ``nhat * (T + 1)`` entries and the input vector ``mhat * T`` (there is
    no stage-T input). Consecutive columns group into pairs; the last pair
    is a singleton when N is odd.
    """

    def __init__(self, problem: GridLQProblem):
        self.K, self.N, self.T = problem.K, problem.N, problem.T
        self.n = [[problem.sub(i, j).n for j in range(self.N)] for i in range(self.K)]
        self.m = [[problem.sub(i, j).m for j in range(self.N)] for i in range(self.K)]
        self.col_n = [[self.n[i][j] for i in range(self.K)] for j in range(self.N)]
        self.col_m = [[self.m[i][j] for i in range(self.K)] for j in range(self.N)]
        self.nbar = [sum(c) for c in self.col_n]
        self.mbar = [sum(c) for c in self.col_m]
        self.nhat = sum(self.nbar)
        self.mhat = sum(self.mbar)
        self.n_total = self.nhat * (self.T + 1)
        self.m_total = self.mhat * self.T

        self.col_x_offset = np.concatenate([[0], np.cumsum(self.nbar)]).astype(int)
        self.col_u_offset = np.concatenate([[0], np.cumsum(self.mbar)]).astype(int)
        self.sub_x_offset = [
            np.concatenate([[0], np.cumsum(c)]).astype(int) for c in self.col_n
        ]
        self.sub_u_offset = [
            np.concatenate([[0], np.cumsum(c)]).astype(int) for c in self.col_m
        ]

        self.pairs = [
            tuple(range(j, min(j + 2, self.N))) for j in range(0, self.N, 2)
        ]

    @property
    def n_pairs(self):
        return len(self.pairs)

    def x_offset(self, i, j, t):
        return t * self.nhat + int(self.col_x_offset[j] + self.sub_x_offset[j][i])

    def u_offset(self, i, j, t):
        return t * self.mhat + int(self.col_u_offset[j] + self.sub_u_offset[j][i])

    def x_slice(self, i, j, t):
        o = self.x_offset(i, j, t)
        return slice(o, o + self.n[i][j])

    def u_slice(self, i, j, t):
        o = self.u_offset(i, j, t)
        return slice(o, o + self.m[i][j])

    def stage_x_slice(self, t):
        return slice(t * self.nhat, (t + 1) * self.nhat)

    def stage_u_slice(self, t):
        return slice(t * self.mhat, (t + 1) * self.mhat)

    def col_x_slice(self, j):
        """Column j's slice inside one stage vector."""
        return slice(int(self.col_x_offset[j]), int(self.col_x_offset[j + 1]))

    def pair_x_slice(self, v):
        """Pair v's (contiguous) slice inside one stage vector."""
        cols = self.pairs[v]
        return slice(int(self.col_x_offset[cols[0]]), int(self.col_x_offset[cols[-1] + 1]))


def state_offsets(problem: GridLQProblem) -> GridLayout:
    return GridLayout(problem)


# ---------------------------------------------------------------------------
# validation


def _check_spd(mat, n, what, msgs):
    mat = np.asarray(mat)
    if mat.shape != (n, n):
        msgs.append(f"{what}: shape {mat.shape}, expected {(n, n)}")
        return
    if symmetry_defect(mat) > 1e-12:
        msgs.append(f"{what}: not symmetric")
        return
    try:
        dense_cholesky(mat)
    except NotPositiveDefiniteError:
        msgs.append(f"{what}: not positive definite")


def validate(problem: GridLQProblem) -> list:
    """Return a list of human-readable invariant violations; empty means valid."""
    msgs = []
    K, N, T = problem.K, problem.N, problem.T
    if K < 1 or N < 1 or T < 1:
        msgs.append(f"grid dimensions must be positive, got K={K} N={N} T={T}")
        return msgs
    if len(problem.subsystems) != K or any(len(r) != N for r in problem.subsystems):
        msgs.append("subsystem table does not match K x N")
        return msgs

    for i in range(K):
        for j in range(N):
            sub = problem.sub(i, j)
            tag = f"subsystem ({i}, {j})"
            n, m = sub.n, sub.m
            if n < 1 or m < 1:
                msgs.append(f"{tag}: dimensions n={n} m={m} must be positive")
                continue
            for name, seq, count, shape in (
                ("A", sub.A, T, (n, n)),
                ("B", sub.B, T, (n, m)),
                ("Q", sub.Q, T + 1, (n, n)),
                ("R", sub.R, T, (m, m)),
            ):
                if len(seq) != count:
                    msgs.append(f"{tag}: {name} has {len(seq)} stages, expected {count}")
                    continue
                for t, mat in enumerate(seq):
                    if np.asarray(mat).shape != shape:
                        msgs.append(
                            f"{tag}: {name}[{t}] shape {np.asarray(mat).shape}, expected {shape}"
                        )
            for t, mat in enumerate(sub.Q):
                if np.asarray(mat).shape == (n, n):
                    _check_spd(mat, n, f"{tag}: Q[{t}]", msgs)
            for t, mat in enumerate(sub.R):
                if np.asarray(mat).shape == (m, m):
                    _check_spd(mat, m, f"{tag}: R[{t}]", msgs)

            for direction in DIRECTIONS:
                blocks = sub.coupling(direction)
                if blocks is None:
                    continue
                if len(blocks) != T:
                    msgs.append(
                        f"{tag}: {direction} coupling has {len(blocks)} stages, expected {T}"
                    )
                    continue
                ni, nj = _neighbor(i, j, direction)
                if 0 <= ni < K and 0 <= nj < N:
                    want = problem.sub(ni, nj).n
                else:
                    sig = _boundary_signal(problem.boundary, direction, i, j)
                    if sig is None:
                        msgs.append(
                            f"{tag}: {direction} coupling points off-grid "
                            "but no boundary trajectory is declared"
                        )
                        continue
                    want = len(np.asarray(sig[0]))
                for t, blk in enumerate(blocks):
                    got = np.asarray(blk).shape
                    if got != (n, want):
                        msgs.append(
                            f"{tag}: {direction} coupling[{t}] shape {got}, "
                            f"expected {(n, want)}"
                        )
                        break

    init = problem.boundary.init
    if len(init) != K or any(len(r) != N for r in init):
        msgs.append("boundary.init does not match K x N")
    else:
        for i in range(K):
            for j in range(N):
                got = np.asarray(init[i][j]).shape
                want = (problem.sub(i, j).n,)
                if got != want:
                    msgs.append(f"initial state ({i}, {j}): shape {got}, expected {want}")

    for direction, count in (("north", N), ("south", N), ("west", K), ("east", K)):
        traj = getattr(problem.boundary, direction)
        if traj is None:
            continue
        if len(traj) != count:
            msgs.append(f"boundary.{direction} has {len(traj)} entries, expected {count}")
            continue
        for idx, seq in enumerate(traj):
            if len(seq) != T:
                msgs.append(
                    f"boundary.{direction}[{idx}] has {len(seq)} stages, expected {T}"
                )
    return msgs


# ---------------------------------------------------------------------------
# generators


def generate_msd_case(K, N, T, seed) -> GridLQProblem:
    """Heterogeneous planar mass-spring-damper grid.

    Each node is a point mass moving in the plane with states
    (px, vx, py, vy) and force inputs (fx, fy). Four spring-damper
    attachments per mass act independently per axis, one toward each grid
    direction; attachments without a grid neighbour anchor to a fixed wall
    at zero, so the boundary trajectories are identically zero and edge
    masses see the same local stiffness as interior ones. Mass, spring
    constant and damping coefficient are drawn uniformly from [0.8, 1.5]
    per node (a node's own parameters shape the forces it feels), and the
    continuous dynamics are discretized by forward Euler with step 0.1.
    Cost weights are Q = I and R = 2 I. Initial states are drawn uniformly
    from [-1, 1]. Identical seeds reproduce the problem bit for bit.
    """
    rng = np.random.default_rng(seed)
    h = EULER_STEP
    q_mat = np.eye(4)
    r_mat = 2.0 * np.eye(2)

    subsystems = []
    init = []
    for i in range(K):
        row = []
        init_row = []
        for j in range(N):
            mass, stiff, damp = rng.uniform(0.8, 1.5, size=3)
            gamma = rng.uniform(-1.0, 1.0, size=4)
            a = 4.0 * stiff / mass
            b = 4.0 * damp / mass
            a_cont = np.array(
                [
                    [0.0, 1.0, 0.0, 0.0],
                    [-a, -b, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 1.0],
                    [0.0, 0.0, -a, -b],
                ]
            )
            a_mat = np.eye(4) + h * a_cont
            b_mat = h * np.array(
                [[0.0, 0.0], [1.0 / mass, 0.0], [0.0, 0.0], [0.0, 1.0 / mass]]
            )
            couple = h * np.array(
                [
                    [0.0, 0.0, 0.0, 0.0],
                    [stiff / mass, damp / mass, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 0.0],
                    [0.0, 0.0, stiff / mass, damp / mass],
                ]
            )
            row.append(
                SubsystemData(
                    n=4,
                    m=2,
                    A=[a_mat] * T,
                    B=[b_mat] * T,
                    Q=[q_mat] * (T + 1),
                    R=[r_mat] * T,
                    west=[couple] * T if j > 0 else None,
                    east=[couple] * T if j < N - 1 else None,
                    north=[couple] * T if i > 0 else None,
                    south=[couple] * T if i < K - 1 else None,
                )
            )
            init_row.append(gamma)
        subsystems.append(row)
        init.append(init_row)
    return GridLQProblem(K, N, T, subsystems, BoundaryData(init=init))


def generate_irrigation_case(K, N, T, seed=None) -> GridLQProblem:
    """Gravity-fed irrigation network under distant-downstream control.

    The first grid row models the head channel: pool (0, j) receives flow
    from pool (0, j-1) through its ``west`` coupling. Every column is a
    secondary channel whose pools feed through their ``south`` coupling,
    so east and north couplings are identically zero and the coupling
    pattern forms a spanning tree of the grid anchored at pool (0, 0).

    Each pool has four states (water-level error, its integral, and a
    two-stage low-pass actuator) and a scalar gate-flow input; the level
    responds to the local actuator and, with rate gain 0.2, to the
    upstream pool's actuator state, discretized by forward Euler with
    step 0.1. Cost weights are Q = I and R = 1. Initial level errors
    default to the deterministic pattern 1 / (1 + i + j); passing a seed
    draws all initial states uniformly from [-1, 1] instead.
    """
    h = EULER_STEP
    a_mat = np.array(
        [
            [1.0 - 0.2 * h, 0.0, 0.0, 0.5 * h],
            [h, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0 - h, 0.0],
            [0.0, 0.0, h, 1.0 - h],
        ]
    )
    b_mat = np.array([[0.0], [0.0], [h], [0.0]])
    couple = np.zeros((4, 4))
    couple[0, 3] = 0.2 * h
    q_mat = np.eye(4)
    r_mat = np.array([[1.0]])
    rng = np.random.default_rng(seed) if seed is not None else None

    subsystems = []
    init = []
    for i in range(K):
        row = []
        init_row = []
        for j in range(N):
            row.append(
                SubsystemData(
                    n=4,
                    m=1,
                    A=[a_mat] * T,
                    B=[b_mat] * T,
                    Q=[q_mat] * (T + 1),
                    R=[r_mat] * T,
                    west=[couple] * T if (i == 0 and j > 0) else None,
                    east=None,
                    north=None,
                    south=[couple] * T if i < K - 1 else None,
                )
            )
            if rng is None:
                gamma = np.array([1.0 / (1.0 + i + j), 0.0, 0.0, 0.0])
            else:
                gamma = rng.uniform(-1.0, 1.0, size=4)
            init_row.append(gamma)
        subsystems.append(row)
        init.append(init_row)
    return GridLQProblem(K, N, T, subsystems, BoundaryData(init=init))


# ---------------------------------------------------------------------------
# problem files (JSON)


def _mats_to_lists(seq):
    if seq is None:
        return None
    return [np.asarray(m).tolist() for m in seq]


def _lists_to_mats(seq):
    if seq is None:
        return None
    return [np.array(m, dtype=float) for m in seq]


def problem_to_dict(problem: GridLQProblem) -> dict:
    subs = []
    for i in range(problem.K):
        row = []
        for j in range(problem.N):
            s = problem.sub(i, j)
            row.append(
                {
                    "n": s.n,
                    "m": s.m,
                    "A": _mats_to_lists(s.A),
                    "B": _mats_to_lists(s.B),
                    "Q": _mats_to_lists(s.Q),
                    "R": _mats_to_lists(s.R),
                    **{d: _mats_to_lists(s.coupling(d)) for d in DIRECTIONS},
                }
            )
        subs.append(row)
    bnd = problem.boundary
    return {
        "format": "grid-lq-problem",
        "version": 1,
        "K": problem.K,
        "N": problem.N,
        "T": problem.T,
        "subsystems": subs,
        "boundary": {
            "init": [[np.asarray(g).tolist() for g in row] for row in bnd.init],
            **{
                d: None
                if getattr(bnd, d) is None
                else [[np.asarray(v).tolist() for v in seq] for seq in getattr(bnd, d)]
                for d in DIRECTIONS
            },
        },
    }


def problem_from_dict(data: dict) -> GridLQProblem:
    if data.get("format") != "grid-lq-problem":
        raise ValueError("not a grid-lq-problem document")
    subs = []
    for row in data["subsystems"]:
        out_row = []
        for rec in row:
            out_row.append(
                SubsystemData(
                    n=int(rec["n"]),
                    m=int(rec["m"]),
                    A=_lists_to_mats(rec["A"]),
                    B=_lists_to_mats(rec["B"]),
                    Q=_lists_to_mats(rec["Q"]),
                    R=_lists_to_mats(rec["R"]),
                    **{d: _lists_to_mats(rec.get(d)) for d in DIRECTIONS},
                )
            )
        subs.append(out_row)
    bnd = data["boundary"]
    boundary = BoundaryData(
        init=[[np.array(g, dtype=float) for g in row] for row in bnd["init"]],
        **{
            d: None
            if bnd.get(d) is None
            else [[np.array(v, dtype=float) for v in seq] for seq in bnd[d]]
            for d in DIRECTIONS
        },
    )
    return GridLQProblem(
        int(data["K"]), int(data["N"]), int(data["T"]), subs, boundary
    )


def save_problem(problem: GridLQProblem, path):
    """Write the problem as a self-describing JSON document.

    Floats serialize through repr, so load(save(p)) reproduces every matrix
    bit for bit.
    """
    with open(path, "w") as fh:
        json.dump(problem_to_dict(problem), fh)
        fh.write("\n")


def load_problem(path) -> GridLQProblem:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))
