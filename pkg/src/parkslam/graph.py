"""Sparse Levenberg-Marquardt over pose/point variables.

The graph keeps factors as plain records.  ``optimize`` compiles them into
per-kind batches, linearizes each batch with vectorized kernels, and solves
the damped normal equations.  Max-mixture factors are re-resolved to their
most likely component after every accepted step.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import factors as fx
from .exceptions import InvalidFactor, SingularSystem
from .factors import POINT, POSE, MaxMixtureFactor, VariableId
from .geometry import Point2, Pose2, normalize_angles

logger = logging.getLogger(__name__)

# below this many free dimensions a dense Cholesky is cheaper than SuperLU
DENSE_LIMIT = 600


@dataclass
class LmConfig:
    max_iterations: int = 100
    initial_lambda: float = 1e-5
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    convergence_tol: float = 1e-10
    step_tol: float = 1e-12
    min_chi2: float = 1e-24
    max_lambda: float = 1e12

    def __post_init__(self) -> None:
        if self.max_iterations <= 0 or self.initial_lambda <= 0 or self.convergence_tol < 0:
            raise ValueError("LmConfig values must be positive")
        if not (self.lambda_up > 1.0 > self.lambda_down > 0.0):
            raise ValueError("need lambda_up > 1 > lambda_down > 0")


@dataclass
class OptimizeResult:
    estimates: dict
    final_chi2: float
    iterations: int
    active_components: dict
    converged: bool
    chi2_history: list = field(default_factory=list)

    @property
    def non_convergence(self) -> bool:
        return not self.converged


class Graph:
    """Variables with current estimates, factors, and gauge anchors."""

    def __init__(self) -> None:
        self._values: dict[VariableId, np.ndarray] = {}
        self.factors: list = []
        self.fixed: set[VariableId] = set()
        self._next_index = {POSE: 0, POINT: 0}

    # variables ---------------------------------------------------------
    def add_variable(self, var: VariableId, value, fixed: bool = False) -> VariableId:
        var = VariableId(*var)
        if var in self._values:
            raise InvalidFactor(f"duplicate variable {var}")
        arr = value.as_array() if isinstance(value, (Pose2, Point2)) else np.array(value, dtype=float)
        if arr.shape != (var.dim,) or not np.all(np.isfinite(arr)):
            raise InvalidFactor(f"bad initial value {arr!r} for {var}")
        self._values[var] = arr
        self._next_index[var.kind] = max(self._next_index[var.kind], var.index + 1)
        if fixed:
            self.fixed.add(var)
        return var

    def new_point(self, point, fixed: bool = False) -> VariableId:
        """Add a point variable under the next unused index."""
        return self.add_point(self._next_index[POINT], point, fixed)

    def add_pose(self, index: int, pose, fixed: bool = False) -> VariableId:
        return self.add_variable(fx.pose_id(index), pose, fixed)

    def add_point(self, index: int, point, fixed: bool = False) -> VariableId:
        return self.add_variable(fx.point_id(index), point, fixed)

    def fix(self, var: VariableId) -> None:
        if var not in self._values:
            raise KeyError(var)
        self.fixed.add(VariableId(*var))

    def unfix(self, var: VariableId) -> None:
        self.fixed.discard(VariableId(*var))

    def __contains__(self, var) -> bool:
        return VariableId(*var) in self._values

    @property
    def variables(self) -> list[VariableId]:
        return list(self._values)

    def value(self, var: VariableId) -> np.ndarray:
        return self._values[VariableId(*var)]

    def set_value(self, var: VariableId, value) -> None:
        var = VariableId(*var)
        if var not in self._values:
            raise KeyError(var)
        arr = value.as_array() if isinstance(value, (Pose2, Point2)) else np.array(value, dtype=float)
        self._values[var] = arr

    def pose(self, index: int) -> Pose2:
        return Pose2.from_array(self._values[fx.pose_id(index)])

    def point(self, index: int) -> Point2:
        return Point2.from_array(self._values[fx.point_id(index)])

    @property
    def estimates(self) -> dict:
        return {k: v.copy() for k, v in self._values.items()}

    # factors -----------------------------------------------------------
    def add_factor(self, factor) -> int:
        for var in factor.variables:
            if var not in self._values:
                raise InvalidFactor(f"factor references unknown variable {var}")
        if isinstance(factor, MaxMixtureFactor):
            if factor.pose.kind != POSE:
                raise InvalidFactor("mixture factor must be anchored on a pose")
        self.factors.append(factor)
        return len(self.factors) - 1

    def chi2(self) -> float:
        """Objective at the current estimates with best mixture components."""
        return _Problem(self).evaluate_cost(None)[0]


# ---------------------------------------------------------------------------
# compiled problem


class _Batch:
    """Factors of one kind, stacked."""

    __slots__ = ("kind", "offsets", "dims", "info", "meas", "factor_idx", "pen")

    def __init__(self, kind, offsets, dims, info, meas, factor_idx, pen=None):
        self.pen = pen
        self.kind = kind
        self.offsets = offsets
        self.dims = dims
        self.info = info
        self.meas = meas
        self.factor_idx = factor_idx


def _gather(x: np.ndarray, off: np.ndarray, dim: int) -> np.ndarray:
    return x[off[:, None] + np.arange(dim)]


def _linearize_batch(batch: _Batch, x: np.ndarray, want_jac: bool):
    vals = [_gather(x, off, d) for off, d in zip(batch.offsets, batch.dims)]
    kind = batch.kind
    if kind == "odometry":
        r = fx.odometry_error(vals[0], vals[1], batch.meas)
        jac = fx.odometry_jacobians(vals[0], vals[1]) if want_jac else None
    elif kind == "point":
        r = fx.point_obs_error(vals[0], vals[1], batch.meas)
        jac = fx.point_obs_jacobians(vals[0], vals[1]) if want_jac else None
    elif kind == "angle":
        r = fx.rect_angle_error(*vals)
        jac = fx.rect_angle_jacobians(*vals) if want_jac else None
    elif kind == "distance":
        r = fx.rect_distance_error(vals[0], vals[1], batch.meas)
        jac = fx.rect_distance_jacobians(vals[0], vals[1]) if want_jac else None
    elif kind.startswith("mixture"):
        pose = vals[0]
        pts = np.stack(vals[1:], axis=1)  # (n, k, 2)
        n, k = pts.shape[:2]
        r = fx.point_obs_error(pose[:, None, :], pts, batch.meas).reshape(n, 2 * k)
        jac = None
        if want_jac:
            jp, jl = fx.point_obs_jacobians(np.broadcast_to(pose[:, None, :], (n, k, 3)), pts)
            jac = [jp.reshape(n, 2 * k, 3)]
            for t in range(k):
                jt = np.zeros((n, 2 * k, 2))
                jt[:, 2 * t : 2 * t + 2, :] = jl[:, t]
                jac.append(jt)
    else:  # pragma: no cover
        raise AssertionError(kind)
    return r, jac


class _Problem:
    def __init__(self, graph: Graph) -> None:
        self.graph = graph
        self.order = list(graph._values)
        self.offset = {}
        pos = 0
        theta_idx = []
        for var in self.order:
            self.offset[var] = pos
            if var.kind == POSE:
                theta_idx.append(pos + 2)
            pos += var.dim
        self.n = pos
        self.theta_idx = np.array(theta_idx, dtype=int)
        self.x = np.zeros(self.n)
        for var in self.order:
            o = self.offset[var]
            self.x[o : o + var.dim] = graph._values[var]
        self.red = np.full(self.n, -1, dtype=int)
        m = 0
        for var in self.order:
            if var in graph.fixed:
                continue
            o = self.offset[var]
            self.red[o : o + var.dim] = np.arange(m, m + var.dim)
            m += var.dim
        self.n_free = m
        self._compile()

    def _compile(self) -> None:
        plain: dict[str, list] = defaultdict(list)
        mixtures: dict[int, list] = defaultdict(list)
        for i, f in enumerate(self.graph.factors):
            if isinstance(f, MaxMixtureFactor):
                mixtures[f.k].append(i)
            elif isinstance(f, fx.OdometryFactor):
                plain["odometry"].append(i)
            elif isinstance(f, fx.PointObservationFactor):
                plain["point"].append(i)
            elif isinstance(f, fx.RectAngleFactor):
                plain["angle"].append(i)
            elif isinstance(f, fx.RectDistanceFactor):
                plain["distance"].append(i)
            else:
                raise InvalidFactor(f"unsupported factor {type(f).__name__}")
        self.batches: list[_Batch] = []
        factors = self.graph.factors
        for kind in ("odometry", "point", "angle", "distance"):
            idx = plain.get(kind)
            if not idx:
                continue
            fs = [factors[i] for i in idx]
            nvar = len(fs[0].variables)
            offsets = [np.array([self.offset[f.variables[s]] for f in fs]) for s in range(nvar)]
            dims = [fs[0].variables[s].dim for s in range(nvar)]
            info = np.stack([f.information for f in fs])
            if kind == "distance":
                meas = np.array([f.d_nominal for f in fs])
            elif kind == "angle":
                meas = None
            else:
                meas = np.stack([f.measurement for f in fs])
            self.batches.append(_Batch(kind, offsets, dims, info, meas, np.array(idx)))

        # every mixture component, flattened per target count
        self.mix_groups = []
        for k, idx in sorted(mixtures.items()):
            comp_factor, comp_local, pose_off, tgt_off, infos, pens, meas = [], [], [], [], [], [], []
            for fi in idx:
                f = factors[fi]
                po = self.offset[f.pose]
                for j, c in enumerate(f.components):
                    comp_factor.append(fi)
                    comp_local.append(j)
                    pose_off.append(po)
                    tgt_off.append([self.offset[t] for t in c.targets])
                    infos.append(c.information)
                    pens.append(c.penalty - f.min_penalty)
                    meas.append(f.measurement)
            self.mix_groups.append(
                dict(
                    k=k,
                    factor=np.array(comp_factor),
                    local=np.array(comp_local),
                    pose_off=np.array(pose_off),
                    tgt_off=np.array(tgt_off).reshape(-1, k),
                    info=np.stack(infos),
                    pen=np.array(pens),
                    meas=np.stack(meas),
                )
            )

    # mixture handling --------------------------------------------------
    def select(self, x: np.ndarray) -> dict[int, int]:
        """Best component (local index) for every mixture factor."""
        active = {}
        for g in self.mix_groups:
            k = g["k"]
            pose = _gather(x, g["pose_off"], 3)
            pts = x[g["tgt_off"][:, :, None] + np.arange(2)]
            r = fx.point_obs_error(pose[:, None, :], pts, g["meas"]).reshape(len(pose), 2 * k)
            q = np.einsum("ni,nij,nj->n", r, g["info"], r)
            score = q + g["pen"]
            order = np.lexsort((g["local"], score, g["factor"]))
            fac = g["factor"][order]
            first = np.ones(len(order), dtype=bool)
            first[1:] = fac[1:] != fac[:-1]
            for pos in order[first]:
                active[int(g["factor"][pos])] = int(g["local"][pos])
        return active

    def _active_batches(self, active: dict[int, int]) -> list[_Batch]:
        out = []
        for g in self.mix_groups:
            k = g["k"]
            chosen = np.fromiter((active[int(f)] for f in g["factor"]), dtype=int, count=len(g["factor"]))
            keep = chosen == g["local"]
            if not keep.any():
                continue
            offsets = [g["pose_off"][keep]] + [g["tgt_off"][keep, t] for t in range(k)]
            dims = [3] + [2] * k
            out.append(_Batch(f"mixture{k}", offsets, dims, g["info"][keep], g["meas"][keep], g["factor"][keep],
                              g["pen"][keep]))
        return out

    # objective ---------------------------------------------------------
    def evaluate_cost(self, active, x=None, mix_batches=None) -> tuple[float, dict]:
        x = self.x if x is None else x
        if active is None:
            active = self.select(x)
            mix_batches = None
        if mix_batches is None:
            mix_batches = self._active_batches(active)
        cost = 0.0
        for b in self.batches + mix_batches:
            r, _ = _linearize_batch(b, x, want_jac=False)
            cost += float(np.einsum("ni,nij,nj->", r, b.info, r))
            if b.pen is not None:
                cost += float(b.pen.sum())
        return cost, active

    def linearize(self, x: np.ndarray, mix_batches: list[_Batch]):
        rows, cols, vals = [], [], []
        g = np.zeros(self.n_free)
        cost = 0.0
        red = self.red
        for b in self.batches + mix_batches:
            r, jac = _linearize_batch(b, x, want_jac=True)
            w = (b.info @ r[:, :, None])[:, :, 0]
            cost += float(np.einsum("ni,ni->", r, w))
            if b.pen is not None:
                cost += float(b.pen.sum())
            idx = [red[off[:, None] + np.arange(d)] for off, d in zip(b.offsets, b.dims)]
            jt_info = [np.swapaxes(j, 1, 2) @ b.info for j in jac]
            for a, (ja, ia) in enumerate(zip(jac, idx)):
                ga = (np.swapaxes(ja, 1, 2) @ w[:, :, None])[:, :, 0]
                mask = ia >= 0
                np.add.at(g, ia[mask], ga[mask])
                for c, (jc, ic) in enumerate(zip(jac, idx)):
                    h = jt_info[a] @ jc
                    rr = np.broadcast_to(ia[:, :, None], h.shape)
                    cc = np.broadcast_to(ic[:, None, :], h.shape)
                    m = (rr >= 0) & (cc >= 0)
                    rows.append(rr[m])
                    cols.append(cc[m])
                    vals.append(h[m])
        if rows:
            H = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.n_free, self.n_free),
            ).tocsc()
            H.sum_duplicates()
        else:
            H = sp.csc_matrix((self.n_free, self.n_free))
        return H, g, cost

    def retract(self, x: np.ndarray, dx: np.ndarray) -> np.ndarray:
        out = x.copy()
        free = self.red >= 0
        out[free] += dx[self.red[free]]
        if len(self.theta_idx):
            out[self.theta_idx] = normalize_angles(out[self.theta_idx])
        return out

    def write_back(self, x: np.ndarray) -> dict:
        est = {}
        for var in self.order:
            o = self.offset[var]
            val = x[o : o + var.dim].copy()
            self.graph._values[var] = val
            est[var] = val.copy()
        return est


def _solve_damped(H: sp.csc_matrix, g: np.ndarray, lam: float, diag_floor: np.ndarray) -> np.ndarray:
    """Solve ``(H + lam * D) dx = -g``; raises LinAlgError if not PD."""
    n = H.shape[0]
    if n <= DENSE_LIMIT:
        A = H.toarray()
        A[np.diag_indices(n)] += lam * diag_floor
        c = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(c, -g, check_finite=False)
    A = (H + sp.diags(lam * diag_floor, format="csc")).tocsc()
    try:
        lu = spla.splu(
            A,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(str(exc)) from exc
    # symmetric ordering without pivoting: positive pivots <=> PD
    if np.any(lu.U.diagonal() <= 0):
        raise np.linalg.LinAlgError("damped system is not positive-definite")
    return lu.solve(-g)


def optimize(graph: Graph, cfg: LmConfig | None = None) -> OptimizeResult:
    """Levenberg-Marquardt on ``graph``; estimates are written back in place."""
    cfg = cfg or LmConfig()
    if not any(v.kind == POSE for v in graph.fixed):
        raise InvalidFactor("graph needs at least one fixed pose (gauge anchor)")
    prob = _Problem(graph)
    x = prob.x
    active = prob.select(x)
    mix = prob._active_batches(active)

    if prob.n_free == 0:
        cost, _ = prob.evaluate_cost(active, x, mix)
        return OptimizeResult(prob.write_back(x), cost, 0, active, True, [cost])

    H, g, cost = prob.linearize(x, mix)
    history = [cost]
    lam = cfg.initial_lambda
    converged = cost <= cfg.min_chi2
    it = 0
    while not converged and it < cfg.max_iterations:
        it += 1
        diag = np.maximum(H.diagonal(), 1e-9)
        accepted = False
        while True:
            try:
                dx = _solve_damped(H, g, lam, diag)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                if lam >= cfg.max_lambda:
                    raise SingularSystem("damped normal equations not positive-definite at maximum damping")
                lam *= cfg.lambda_up
                continue
            x_new = prob.retract(x, dx)
            cost_new, _ = prob.evaluate_cost(active, x_new, mix)
            if cost_new < cost:
                accepted = True
                break
            lam *= cfg.lambda_up
            if lam > cfg.max_lambda:
                break
        if not accepted:
            # no damping level decreases the objective: at a minimum
            converged = True
            break
        step = float(np.max(np.abs(dx)))
        x = x_new
        active = prob.select(x)
        mix = prob._active_batches(active)
        H, g, cost_sel = prob.linearize(x, mix)
        rel = (cost - cost_sel) / max(cost, 1e-300)
        cost = cost_sel
        history.append(cost)
        lam = max(lam * cfg.lambda_down, 1e-15)
        if cost <= cfg.min_chi2 or rel < cfg.convergence_tol or step < cfg.step_tol:
            converged = True
    if not converged:
        logger.info("optimize: max_iterations=%d reached, chi2=%.6g", cfg.max_iterations, cost)
    return OptimizeResult(prob.write_back(x), cost, it, active, converged, history)
