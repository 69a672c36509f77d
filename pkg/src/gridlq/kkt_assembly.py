"""Assembly of the stacked optimality system and its structured reduction.

Eliminating states and inputs from the first-order optimality conditions of
the stacked quadratic program leaves one SPD system in the constraint
multipliers. Its operator is block tri-diagonal across stages; every stage
diagonal is block penta-diagonal across grid columns, and each of those
blocks is banded across grid rows. This module assembles that operator
matrix-free (``SchurOperator``), plus the two-level splitting used by the
nested Jacobi sweeps: consecutive columns are grouped into pairs, the
paired diagonal blocks become SPD block tri-diagonal matrices after row
interleaving (``PairSplitting``), and the inter-pair couplings are applied
on the fly.

Sign conventions: the multiplier system is ``delta_op @ lam = offset`` and
the primal recovery is ``x = -Qinv (A' lam)``, ``u = -Rinv (B' lam)``,
where the stacked constraint reads ``A x + B u + offset = 0`` with identity
blocks pinning each stage to the previous one and stage 0 to the initial
states.
"""

from __future__ import annotations

import numpy as np

from .block_linalg import BlockBanded, block_tridiag_factor, spd_inverse
from .errors import DimensionGuardError, DimensionMismatchError
from .grid_problem import GridLQProblem, GridLayout, state_offsets, validate

DENSIFY_GUARD = 2000


def _diag_banded(row_sizes, col_sizes, blocks):
    out = BlockBanded(row_sizes, col_sizes, bandwidth=0)
    for i, blk in enumerate(blocks):
        out.set_block(i, i, blk)
    return out


class StackedSystem:
    """Stage-stacked constraint, input and cost operators plus the offset
    vector collecting initial and boundary data."""

    def __init__(self, problem, layout, a_pieces, b_diag, q_blocks, qinv_blocks,
                 r_blocks, rinv_blocks, offset):
        self.problem = problem
        self.layout = layout
        self.a_pieces = a_pieces      # [t][(j, jc)] -> BlockBanded over rows
        self.b_diag = b_diag          # [t][j] -> BlockBanded (states x inputs)
        self.q_blocks = q_blocks      # [t][j][i] dense
        self.qinv_blocks = qinv_blocks
        self.r_blocks = r_blocks
        self.rinv_blocks = rinv_blocks
        self.offset = offset

    # -- stage helpers ------------------------------------------------------

    def _a_stage_apply(self, t, xt):
        lay = self.layout
        out = np.zeros_like(xt)
        for (j, jc), piece in self.a_pieces[t].items():
            out[lay.col_x_slice(j)] += piece.matvec(xt[lay.col_x_slice(jc)])
        return out

    def _a_stage_apply_t(self, t, dt):
        lay = self.layout
        out = np.zeros_like(dt)
        for (j, jc), piece in self.a_pieces[t].items():
            out[lay.col_x_slice(jc)] += piece.rmatvec(dt[lay.col_x_slice(j)])
        return out

    def _diag_apply(self, blocks, sizes_per_col, x, offs):
        out = np.zeros_like(x)
        for j, col in enumerate(blocks):
            lo = offs[j]
            for i, blk in enumerate(col):
                s = slice(lo, lo + blk.shape[1])
                o = slice(lo, lo + blk.shape[0])
                out[o] = blk @ x[s]
                lo += blk.shape[1]
        return out

    # -- full-horizon applies -----------------------------------------------

    def apply_constraint(self, x):
        """Stacked constraint map: stage 0 row is -x_0, stage t+1 row is
        A_t x_t - x_{t+1}."""
        lay = self.layout
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[lay.stage_x_slice(0)] = -x[lay.stage_x_slice(0)]
        for t in range(lay.T):
            out[lay.stage_x_slice(t + 1)] = self._a_stage_apply(
                t, x[lay.stage_x_slice(t)]
            ) - x[lay.stage_x_slice(t + 1)]
        return out

    def apply_constraint_t(self, d):
        lay = self.layout
        d = np.asarray(d, dtype=float)
        out = -d.copy()
        for t in range(lay.T):
            out[lay.stage_x_slice(t)] += self._a_stage_apply_t(
                t, d[lay.stage_x_slice(t + 1)]
            )
        return out

    def apply_input_map(self, u):
        lay = self.layout
        u = np.asarray(u, dtype=float)
        out = np.zeros(lay.n_total)
        for t in range(lay.T):
            ut = u[lay.stage_u_slice(t)]
            yt = out[lay.stage_x_slice(t + 1)]
            for j, piece in enumerate(self.b_diag[t]):
                yt[lay.col_x_slice(j)] += piece.matvec(
                    ut[lay.col_u_offset[j] : lay.col_u_offset[j + 1]]
                )
        return out

    def apply_input_map_t(self, d):
        lay = self.layout
        d = np.asarray(d, dtype=float)
        out = np.zeros(lay.m_total)
        for t in range(lay.T):
            dt = d[lay.stage_x_slice(t + 1)]
            ut = out[lay.stage_u_slice(t)]
            for j, piece in enumerate(self.b_diag[t]):
                ut[lay.col_u_offset[j] : lay.col_u_offset[j + 1]] += piece.rmatvec(
                    dt[lay.col_x_slice(j)]
                )
        return out

    def _cost_apply(self, table, x, per_stage, stage_slice, offs):
        out = np.zeros_like(np.asarray(x, dtype=float))
        for t in range(per_stage):
            xt = x[stage_slice(t)]
            yt = out[stage_slice(t)]
            lo = 0
            for col in table[t]:
                for blk in col:
                    yt[lo : lo + blk.shape[0]] = blk @ xt[lo : lo + blk.shape[0]]
                    lo += blk.shape[0]
        return out

    def apply_cost_x(self, x):
        lay = self.layout
        return self._cost_apply(self.q_blocks, x, lay.T + 1, lay.stage_x_slice, None)

    def apply_cost_inverse_x(self, x):
        lay = self.layout
        return self._cost_apply(self.qinv_blocks, x, lay.T + 1, lay.stage_x_slice, None)

    def apply_cost_u(self, u):
        lay = self.layout
        return self._cost_apply(self.r_blocks, u, lay.T, lay.stage_u_slice, None)

    def apply_cost_inverse_u(self, u):
        lay = self.layout
        return self._cost_apply(self.rinv_blocks, u, lay.T, lay.stage_u_slice, None)

    # -- dense views (tests and oracles only) --------------------------------

    def _guard(self, max_dim):
        if self.layout.n_total > max_dim:
            raise DimensionGuardError(
                f"dense view of dimension {self.layout.n_total} exceeds cap {max_dim}"
            )

    def densify_constraint(self, max_dim=DENSIFY_GUARD):
        self._guard(max_dim)
        lay = self.layout
        out = np.zeros((lay.n_total, lay.n_total))
        eye = np.eye(lay.nhat)
        for t in range(lay.T + 1):
            s = lay.stage_x_slice(t)
            out[s, s] = -eye
        for t in range(lay.T):
            rows = lay.stage_x_slice(t + 1)
            cols = lay.stage_x_slice(t)
            blk = np.zeros((lay.nhat, lay.nhat))
            for (j, jc), piece in self.a_pieces[t].items():
                blk[lay.col_x_slice(j), lay.col_x_slice(jc)] = piece.densify()
            out[rows, cols] = blk
        return out

    def densify_input_map(self, max_dim=DENSIFY_GUARD):
        self._guard(max_dim)
        lay = self.layout
        out = np.zeros((lay.n_total, lay.m_total))
        for t in range(lay.T):
            for j, piece in enumerate(self.b_diag[t]):
                rows = slice(
                    (t + 1) * lay.nhat + lay.col_x_offset[j],
                    (t + 1) * lay.nhat + lay.col_x_offset[j + 1],
                )
                cols = slice(
                    t * lay.mhat + lay.col_u_offset[j],
                    t * lay.mhat + lay.col_u_offset[j + 1],
                )
                out[rows, cols] = piece.densify()
        return out


def build_stacked(problem: GridLQProblem) -> StackedSystem:
    """Assemble the stacked operators and the offset vector.

    Raises ValueError with the collected messages when validate() fails.
    """
    msgs = validate(problem)
    if msgs:
        raise ValueError("invalid problem: " + "; ".join(msgs))
    lay = state_offsets(problem)
    K, N, T = problem.K, problem.N, problem.T

    a_pieces = []
    b_diag = []
    for t in range(T):
        pieces = {}
        for j in range(N):
            diag = BlockBanded(lay.col_n[j], bandwidth=1)
            for i in range(K):
                sub = problem.sub(i, j)
                diag.set_block(i, i, sub.A[t])
                if i > 0 and sub.north is not None:
                    diag.set_block(i, i - 1, sub.north[t])
                if i < K - 1 and sub.south is not None:
                    diag.set_block(i, i + 1, sub.south[t])
            pieces[(j, j)] = diag
            if j > 0:
                west = [
                    problem.sub(i, j).west[t]
                    if problem.sub(i, j).west is not None
                    else np.zeros((lay.n[i][j], lay.n[i][j - 1]))
                    for i in range(K)
                ]
                if any(np.any(w) for w in west):
                    pieces[(j, j - 1)] = _diag_banded(lay.col_n[j], lay.col_n[j - 1], west)
            if j < N - 1:
                east = [
                    problem.sub(i, j).east[t]
                    if problem.sub(i, j).east is not None
                    else np.zeros((lay.n[i][j], lay.n[i][j + 1]))
                    for i in range(K)
                ]
                if any(np.any(e) for e in east):
                    pieces[(j, j + 1)] = _diag_banded(lay.col_n[j], lay.col_n[j + 1], east)
        a_pieces.append(pieces)
        b_diag.append(
            [
                _diag_banded(lay.col_n[j], lay.col_m[j],
                             [problem.sub(i, j).B[t] for i in range(K)])
                for j in range(N)
            ]
        )

    q_blocks = [
        [[np.asarray(problem.sub(i, j).Q[t], dtype=float) for i in range(K)]
         for j in range(N)]
        for t in range(T + 1)
    ]
    qinv_blocks = [
        [[spd_inverse(problem.sub(i, j).Q[t]) for i in range(K)] for j in range(N)]
        for t in range(T + 1)
    ]
    r_blocks = [
        [[np.asarray(problem.sub(i, j).R[t], dtype=float) for i in range(K)]
         for j in range(N)]
        for t in range(T)
    ]
    rinv_blocks = [
        [[spd_inverse(problem.sub(i, j).R[t]) for i in range(K)] for j in range(N)]
        for t in range(T)
    ]

    offset = np.zeros(lay.n_total)
    bnd = problem.boundary
    for i in range(K):
        for j in range(N):
            offset[lay.x_slice(i, j, 0)] = np.asarray(bnd.init[i][j], dtype=float)
    for t in range(T):
        for i in range(K):
            for j in range(N):
                sub = problem.sub(i, j)
                acc = None
                for direction, at_edge in (
                    ("north", i == 0),
                    ("south", i == K - 1),
                    ("west", j == 0),
                    ("east", j == N - 1),
                ):
                    blocks = sub.coupling(direction)
                    if not at_edge or blocks is None:
                        continue
                    traj = getattr(bnd, direction)
                    if traj is None:
                        continue
                    sig = traj[j if direction in ("north", "south") else i][t]
                    term = np.asarray(blocks[t]) @ np.asarray(sig, dtype=float)
                    acc = term if acc is None else acc + term
                if acc is not None:
                    offset[lay.x_slice(i, j, t + 1)] += acc
    return StackedSystem(problem, lay, a_pieces, b_diag, q_blocks, qinv_blocks,
                         r_blocks, rinv_blocks, offset)


# ---------------------------------------------------------------------------
# reduced multiplier operator


def _accumulate_product(target, a_piece, diag, b_piece, lower_only):
    """target += a_piece @ blkdiag(diag) @ b_piece', block-wise."""
    by_col = {}
    for (r, c), blk in b_piece.blocks.items():
        by_col.setdefault(c, []).append((r, blk))
    for (r, k), ablk in a_piece.blocks.items():
        hits = by_col.get(k)
        if not hits:
            continue
        pre = ablk @ diag[k]
        for c, bblk in hits:
            if lower_only and c > r:
                continue
            target.add_block(r, c, pre @ bblk.T)


class SchurOperator:
    """Matrix-free reduced multiplier operator.

    ``stage_diag[t]`` maps (j, jc) with jc <= j to the banded-over-rows
    column blocks of the stage-t diagonal (the (j, j) entries are symmetric
    and store only their lower row triangle). ``stage_coupling[t]`` holds
    the sub-diagonal stage block coupling stage t into stage t+1; the
    super-diagonal is its transpose, shared storage, so the densified
    operator is exactly symmetric.
    """

    def __init__(self, layout: GridLayout, stage_diag, stage_coupling):
        self.layout = layout
        self.stage_diag = stage_diag
        self.stage_coupling = stage_coupling
        self.dim = layout.n_total
        self.pairs = layout.pairs

    # -- stage-level pieces ---------------------------------------------

    def apply_stage_diag(self, t, xt):
        lay = self.layout
        out = np.zeros_like(xt)
        for (j, jc), piece in self.stage_diag[t].items():
            out[lay.col_x_slice(j)] += piece.matvec(xt[lay.col_x_slice(jc)])
            if j != jc:
                out[lay.col_x_slice(jc)] += piece.rmatvec(xt[lay.col_x_slice(j)])
        return out

    def _coupling_apply(self, t, xt):
        lay = self.layout
        out = np.zeros_like(xt)
        for (j, jc), piece in self.stage_coupling[t].items():
            out[lay.col_x_slice(j)] += piece.matvec(xt[lay.col_x_slice(jc)])
        return out

    def _coupling_apply_t(self, t, xt):
        lay = self.layout
        out = np.zeros_like(xt)
        for (j, jc), piece in self.stage_coupling[t].items():
            out[lay.col_x_slice(jc)] += piece.rmatvec(xt[lay.col_x_slice(j)])
        return out

    # -- full operator ----------------------------------------------------

    def _promote(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"operand has {x.shape[0]} rows, operator dimension is {self.dim}"
            )
        return x

    def _stage_row(self, t, x):
        lay = self.layout
        xt = x[lay.stage_x_slice(t)]
        row = self.apply_stage_diag(t, xt)
        if t > 0:
            row += self._coupling_apply(t - 1, x[lay.stage_x_slice(t - 1)])
        if t < lay.T:
            row += self._coupling_apply_t(t, x[lay.stage_x_slice(t + 1)])
        return row

    def apply(self, x, pool=None):
        """Operator product; stage rows are independent tasks."""
        x = self._promote(x)
        out = np.empty_like(x)
        lay = self.layout

        def run(t):
            out[lay.stage_x_slice(t)] = self._stage_row(t, x)

        if pool is None:
            for t in range(lay.T + 1):
                run(t)
        else:
            list(pool.map(run, range(lay.T + 1)))
        return out

    def apply_block_diag(self, x):
        """Stage-block-diagonal part alone (the outer splitting's D)."""
        x = self._promote(x)
        out = np.empty_like(x)
        lay = self.layout
        for t in range(lay.T + 1):
            out[lay.stage_x_slice(t)] = self.apply_stage_diag(t, x[lay.stage_x_slice(t)])
        return out

    def apply_outer_coupling(self, x):
        """The outer splitting's C = D - operator: negated stage couplings."""
        x = self._promote(x)
        out = np.zeros_like(x)
        lay = self.layout
        for t in range(lay.T + 1):
            row = out[lay.stage_x_slice(t)]
            if t > 0:
                row -= self._coupling_apply(t - 1, x[lay.stage_x_slice(t - 1)])
            if t < lay.T:
                row -= self._coupling_apply_t(t, x[lay.stage_x_slice(t + 1)])
        return out

    # -- bookkeeping --------------------------------------------------------

    @property
    def matvec_flops(self):
        total = 0
        for pieces in self.stage_diag:
            for (j, jc), piece in pieces.items():
                total += piece.matvec_flops if j == jc else 2 * piece.matvec_flops
        for pieces in self.stage_coupling:
            total += 2 * sum(p.matvec_flops for p in pieces.values())
        return total

    @property
    def outer_coupling_flops(self):
        return 2 * sum(
            sum(p.matvec_flops for p in pieces.values())
            for pieces in self.stage_coupling
        )

    def _guard(self, max_dim):
        if self.dim > max_dim:
            raise DimensionGuardError(
                f"dense view of dimension {self.dim} exceeds cap {max_dim}"
            )

    def densify(self, max_dim=DENSIFY_GUARD):
        self._guard(max_dim)
        lay = self.layout
        out = np.zeros((self.dim, self.dim))
        for t in range(lay.T + 1):
            s = lay.stage_x_slice(t)
            blk = np.zeros((lay.nhat, lay.nhat))
            for (j, jc), piece in self.stage_diag[t].items():
                blk[lay.col_x_slice(j), lay.col_x_slice(jc)] = piece.densify()
                if j != jc:
                    blk[lay.col_x_slice(jc), lay.col_x_slice(j)] = piece.densify().T
            out[s, s] = blk
        for t in range(lay.T):
            blk = np.zeros((lay.nhat, lay.nhat))
            for (j, jc), piece in self.stage_coupling[t].items():
                blk[lay.col_x_slice(j), lay.col_x_slice(jc)] = piece.densify()
            out[lay.stage_x_slice(t + 1), lay.stage_x_slice(t)] = blk
            out[lay.stage_x_slice(t), lay.stage_x_slice(t + 1)] = blk.T
        return out

    def densify_block_diag(self, max_dim=DENSIFY_GUARD):
        self._guard(max_dim)
        lay = self.layout
        out = np.zeros((self.dim, self.dim))
        for t in range(lay.T + 1):
            s = lay.stage_x_slice(t)
            blk = np.zeros((lay.nhat, lay.nhat))
            for (j, jc), piece in self.stage_diag[t].items():
                blk[lay.col_x_slice(j), lay.col_x_slice(jc)] = piece.densify()
                if j != jc:
                    blk[lay.col_x_slice(jc), lay.col_x_slice(j)] = piece.densify().T
            out[s, s] = blk
        return out


def build_schur(stacked: StackedSystem) -> SchurOperator:
    """Assemble the stage diagonals and stage couplings of the reduced
    operator from the stacked data."""
    lay = stacked.layout
    N, T, K = lay.N, lay.T, lay.K

    stage_diag = []
    for t in range(T + 1):
        pieces = {}
        for j in range(N):
            diag = BlockBanded(lay.col_n[j], bandwidth=2, symmetric=True)
            for i in range(K):
                diag.add_block(i, i, stacked.qinv_blocks[t][j][i])
            pieces[(j, j)] = diag
        if t >= 1:
            ap = stacked.a_pieces[t - 1]
            qi = stacked.qinv_blocks[t - 1]
            for k in range(N):
                sharing = [(j, piece) for (j, kc), piece in ap.items() if kc == k]
                for j, piece_j in sharing:
                    for jp, piece_jp in sharing:
                        if jp > j:
                            continue
                        if jp == j:
                            _accumulate_product(
                                pieces[(j, j)], piece_j, qi[k], piece_jp, True
                            )
                        else:
                            tgt = pieces.get((j, jp))
                            if tgt is None:
                                tgt = BlockBanded(
                                    lay.col_n[j], lay.col_n[jp], bandwidth=2 - (j - jp)
                                )
                                pieces[(j, jp)] = tgt
                            _accumulate_product(tgt, piece_j, qi[k], piece_jp, False)
            for j in range(N):
                for i in range(K):
                    b = np.asarray(stacked.problem.sub(i, j).B[t - 1], dtype=float)
                    term = b @ stacked.rinv_blocks[t - 1][j][i] @ b.T
                    pieces[(j, j)].add_block(i, i, 0.5 * (term + term.T))
        for (j, jc), piece in pieces.items():
            if j == jc:
                for i in range(K):
                    if (i, i) in piece.blocks:
                        blk = piece.blocks[(i, i)]
                        piece.blocks[(i, i)] = 0.5 * (blk + blk.T)
        stage_diag.append(pieces)

    stage_coupling = []
    for t in range(T):
        pieces = {}
        for (j, jc), piece in stacked.a_pieces[t].items():
            out = BlockBanded(piece.row_sizes, piece.col_sizes, piece.bandwidth)
            for (r, c), blk in piece.blocks.items():
                out.set_block(r, c, -(blk @ stacked.qinv_blocks[t][jc][c]))
            pieces[(j, jc)] = out
        stage_coupling.append(pieces)
    return SchurOperator(lay, stage_diag, stage_coupling)


def apply_delta(schur: SchurOperator, x, pool=None):
    """Product of the reduced multiplier operator with x."""
    return schur.apply(x, pool=pool)


# ---------------------------------------------------------------------------
# column-pair splitting of the stage diagonals


class PairSplitting:
    """Groups grid columns into consecutive pairs and extracts, for every
    (pair, stage), the SPD paired diagonal block in row-interleaved order
    (block tri-diagonal after pairing rows), leaving the negated inter-pair
    couplings to be applied on the fly.

    The extraction is programmatic from the assembled stage diagonals, so
    the reconstruction ``pair-diagonal minus couplings = stage diagonal``
    holds exactly, block for block.
    """

    def __init__(self, schur: SchurOperator):
        self.schur = schur
        lay = schur.layout
        self.layout = lay
        self.pairs = lay.pairs
        self.pair_perm = [self._perm(v) for v in range(len(self.pairs))]
        self.cross_keys = [self._cross(v) for v in range(len(self.pairs))]
        self.pair_blocks = {}
        for t in range(lay.T + 1):
            for v in range(len(self.pairs)):
                self.pair_blocks[(v, t)] = self._extract(v, t)

    def _perm(self, v):
        lay = self.layout
        cols = self.pairs[v]
        if len(cols) == 1:
            return np.arange(lay.nbar[cols[0]], dtype=np.intp)
        ja, jb = cols
        base_b = lay.nbar[ja]
        out = []
        for i in range(lay.K):
            out.extend(range(lay.sub_x_offset[ja][i], lay.sub_x_offset[ja][i + 1]))
            out.extend(
                base_b + k
                for k in range(lay.sub_x_offset[jb][i], lay.sub_x_offset[jb][i + 1])
            )
        return np.array(out, dtype=np.intp)

    def _cross(self, v):
        if v == 0:
            return []
        return [
            (j, jc)
            for j in self.pairs[v]
            for jc in self.pairs[v - 1]
            if j - jc <= 2
        ]

    def _extract(self, v, t):
        lay = self.layout
        pieces = self.schur.stage_diag[t]
        cols = self.pairs[v]
        if len(cols) == 1:
            sup = pieces[(cols[0], cols[0])]
        else:
            ja, jb = cols
            p_aa = pieces[(ja, ja)]
            p_bb = pieces[(jb, jb)]
            p_ba = pieces.get((jb, ja))
            sizes = [lay.n[i][ja] + lay.n[i][jb] for i in range(lay.K)]
            sup = BlockBanded(sizes, bandwidth=2, symmetric=True)
            for i in range(lay.K):
                for ic in range(max(0, i - 2), i + 1):
                    blk_ab = (
                        p_ba.block(ic, i).T
                        if p_ba is not None
                        else np.zeros((lay.n[i][ja], lay.n[ic][jb]))
                    )
                    blk_ba = (
                        p_ba.block(i, ic)
                        if p_ba is not None
                        else np.zeros((lay.n[i][jb], lay.n[ic][ja]))
                    )
                    sup.set_block(
                        i,
                        ic,
                        np.block(
                            [
                                [p_aa.block(i, ic), blk_ab],
                                [blk_ba, p_bb.block(i, ic)],
                            ]
                        ),
                    )
        tri = sup.pair_rows()
        return tri

    # -- application -------------------------------------------------------

    def apply_inner_coupling(self, x):
        """Negated inter-pair couplings of every stage diagonal (the inner
        splitting's C term)."""
        lay = self.layout
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for t in range(lay.T + 1):
            xt = x[lay.stage_x_slice(t)]
            ot = out[lay.stage_x_slice(t)]
            pieces = self.schur.stage_diag[t]
            for v in range(1, len(self.pairs)):
                for j, jc in self.cross_keys[v]:
                    piece = pieces.get((j, jc))
                    if piece is None:
                        continue
                    ot[lay.col_x_slice(j)] -= piece.matvec(xt[lay.col_x_slice(jc)])
                    ot[lay.col_x_slice(jc)] -= piece.rmatvec(xt[lay.col_x_slice(j)])
        return out

    @property
    def inner_coupling_flops(self):
        lay = self.layout
        total = 0
        for t in range(lay.T + 1):
            pieces = self.schur.stage_diag[t]
            for v in range(1, len(self.pairs)):
                for key in self.cross_keys[v]:
                    piece = pieces.get(key)
                    if piece is not None:
                        total += 2 * piece.matvec_flops
        return total

    def pair_global_indices(self, v, t):
        """Global positions of the interleaved local ordering of (v, t)."""
        lay = self.layout
        start = t * lay.nhat + lay.pair_x_slice(v).start
        return start + self.pair_perm[v]

    def densify_pair_diag(self, max_dim=DENSIFY_GUARD):
        """Dense block diagonal of all paired blocks, in global ordering."""
        if self.schur.dim > max_dim:
            raise DimensionGuardError(
                f"dense view of dimension {self.schur.dim} exceeds cap {max_dim}"
            )
        out = np.zeros((self.schur.dim, self.schur.dim))
        for (v, t), tri in self.pair_blocks.items():
            g = self.pair_global_indices(v, t)
            out[np.ix_(g, g)] = tri.densify()
        return out

    def factor_all(self):
        """Cholesky factors of every paired diagonal block, keyed (v, t)."""
        return {key: block_tridiag_factor(tri) for key, tri in self.pair_blocks.items()}


def build_splitting(schur: SchurOperator) -> PairSplitting:
    return PairSplitting(schur)


# ---------------------------------------------------------------------------
# closed-form cross-check of the stage-diagonal blocks


def _dense_col_dyn(problem, lay, t, j):
    """Dense column operators at stage t: within-column map, west map,
    east map (None when the column has no such coupling)."""
    K = problem.K
    nb = lay.nbar[j]
    a = np.zeros((nb, nb))
    off = lay.sub_x_offset[j]
    for i in range(K):
        sub = problem.sub(i, j)
        a[off[i] : off[i + 1], off[i] : off[i + 1]] = sub.A[t]
        if i > 0 and sub.north is not None:
            a[off[i] : off[i + 1], off[i - 1] : off[i]] = sub.north[t]
        if i < K - 1 and sub.south is not None:
            a[off[i] : off[i + 1], off[i + 1] : off[i + 2]] = sub.south[t]

    def diag_dir(direction, jc):
        if not (0 <= jc < problem.N):
            return None
        cols = lay.sub_x_offset[jc]
        out = np.zeros((nb, lay.nbar[jc]))
        seen = False
        for i in range(K):
            blocks = problem.sub(i, j).coupling(direction)
            if blocks is None:
                continue
            seen = True
            out[off[i] : off[i + 1], cols[i] : cols[i + 1]] = blocks[t]
        return out if seen else None

    return a, diag_dir("west", j - 1), diag_dir("east", j + 1)


def reference_stage_block(problem: GridLQProblem, t, j, jc):
    """Closed-form dense value of the stage-t diagonal's (j, jc) block,
    built directly from per-column formulas.

    Independent of the banded assembly path: column operators are formed
    dense straight from the problem data and combined per the elimination
    formulas (within-column, one-apart and two-apart cases), including the
    cost-inverse and input block-diagonal terms on the main case. Only
    stages t >= 1 carry dynamics data (at stage index t - 1).
    """
    if not 1 <= t <= problem.T:
        raise ValueError("closed form applies to stages 1..T")
    if not 0 <= j - jc <= 2:
        raise ValueError("blocks exist for 0 <= j - jc <= 2")
    lay = state_offsets(problem)
    td = t - 1

    def qinv_col(jq):
        off = lay.sub_x_offset[jq]
        out = np.zeros((lay.nbar[jq], lay.nbar[jq]))
        for i in range(problem.K):
            out[off[i] : off[i + 1], off[i] : off[i + 1]] = np.linalg.inv(
                np.asarray(problem.sub(i, jq).Q[td], dtype=float)
            )
        return out

    a_j, w_j, e_j = _dense_col_dyn(problem, lay, td, j)
    if jc == j:
        out = a_j @ qinv_col(j) @ a_j.T
        if w_j is not None:
            out = out + w_j @ qinv_col(j - 1) @ w_j.T
        if e_j is not None:
            out = out + e_j @ qinv_col(j + 1) @ e_j.T
        off = lay.sub_x_offset[j]
        for i in range(problem.K):
            sub = problem.sub(i, j)
            sl = slice(off[i], off[i + 1])
            out[sl, sl] += np.linalg.inv(np.asarray(sub.Q[t], dtype=float))
            b = np.asarray(sub.B[td], dtype=float)
            out[sl, sl] += b @ np.linalg.inv(np.asarray(sub.R[td], dtype=float)) @ b.T
        return out
    if jc == j - 1:
        a_c, _, e_c = _dense_col_dyn(problem, lay, td, jc)
        out = np.zeros((lay.nbar[j], lay.nbar[jc]))
        if w_j is not None:
            out = out + w_j @ qinv_col(jc) @ a_c.T
        if e_c is not None:
            out = out + a_j @ qinv_col(j) @ e_c.T
        return out
    a_c, _, e_c = _dense_col_dyn(problem, lay, td, jc)
    out = np.zeros((lay.nbar[j], lay.nbar[jc]))
    if w_j is not None and e_c is not None:
        out = out + w_j @ qinv_col(j - 1) @ e_c.T
    return out
