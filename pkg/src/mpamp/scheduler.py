"""Dynamic-programming optimizer for per-iteration coding rates.

Finds the cheapest coding-rate sequence that drives the excess MSE below
a target, where one iteration at rate R costs b * 1{R != 0} + R.  The
value function Phi_k(sigma2) is the least cost to finish within k + 1
more iterations starting from scalar-channel variance sigma2; it obeys

    Phi_k(sigma2) = min_R { b + R + Phi_{k-1}(next_sigma2(sigma2, R)) }

with a base case that picks the cheapest single rate meeting the target.
The recursion runs on a discretized sigma2 grid (geometric in dB) with
linear interpolation of Phi between nodes; a zero rate is an idle round
that leaves the state unchanged, so Phi never increases with horizon.

Near the fixed point the feasibility boundary moves by factors of theta
per horizon, which for tight targets is far below any practical uniform
dB resolution; the grid therefore carries extra sub-resolution nodes in
a geometric ladder above sigma_inf2, and the base case is evaluated in
closed form (threshold comparison) rather than by interpolation.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InfeasibleError, NumericalError
from .priors import denoiser_mse, denoiser_mse_batch
from .state_evolution import fixed_point, run_schedule

__all__ = [
    "CostModel",
    "DPGrid",
    "DPTable",
    "RateSchedule",
    "cost_of",
    "build_grid",
    "solve",
    "verify_interpolation",
    "verify_rate_resolution",
]

_IDLE_EPS = 1e-12


@dataclass(frozen=True)
class CostModel:
    """Computation cost of one iteration, in units of one bit per entry."""

    b: float

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("iteration cost b must be nonnegative")


def cost_of(rates, b):
    """Combined cost b * ||R||_0 + ||R||_1; zero rates are idle rounds."""
    rates = np.asarray(list(rates), dtype=float)
    if rates.size == 0:
        return 0.0
    if np.any(rates < 0):
        raise ValueError("rates must be nonnegative")
    return float(np.sum(b * (rates != 0) + rates))


@dataclass(frozen=True)
class DPGrid:
    """Discretized search spaces for the DP recursion."""

    sigma2: np.ndarray          # ascending; last node is sigma_1^2
    rates: np.ndarray           # positive rate grid, ascending
    dsigma_db: float
    dr: float
    r_max: float
    t_max: int

    def __post_init__(self):
        if self.sigma2.size < 2 or self.rates.size < 1:
            raise ValueError("grids must be nonempty")
        if np.any(np.diff(self.sigma2) <= 0) or np.any(np.diff(self.rates) <= 0):
            raise ValueError("grids must be strictly increasing")

    @property
    def sigma2_db(self):
        return 10.0 * np.log10(self.sigma2)


@dataclass(frozen=True)
class DPTable:
    """Cost-to-go and argmin-rate tables over (horizon, sigma2 node).

    ``phi[k, i]`` is the least cost to finish within k + 1 iterations from
    node i (inf when infeasible); ``argrate[k, i]`` is the minimizing rate
    (0 for an idle round, NaN when infeasible).  ``edges[k]`` is the exact
    largest feasible state at horizon k, tracked separately because the
    feasibility boundary moves by factors of theta per horizon and quickly
    drops below any fixed grid resolution.
    """

    grid: DPGrid
    phi: np.ndarray
    argrate: np.ndarray
    edges: np.ndarray = field(default=None)


@dataclass(frozen=True)
class RateSchedule:
    """A coding-rate sequence with its predicted trajectory."""

    rates: tuple
    b: float
    delta: float
    trajectory: tuple = field(default=())

    @property
    def t(self):
        return len(self.rates)

    @property
    def r_agg(self):
        return float(sum(self.rates))

    @property
    def cost(self):
        return cost_of(self.rates, self.b)

    @property
    def final_mse(self):
        return self.trajectory[-1].mse if self.trajectory else math.nan

    @property
    def final_emse(self):
        return self.trajectory[-1].emse if self.trajectory else math.nan


class _MseTable:
    """Dense tabulation of the denoiser MSE, linear in (ln v, ln MSE).

    Carries extra nodes in a geometric ladder just above the fixed point
    so interpolated excess MSE stays accurate at sub-grid scales.
    """

    def __init__(self, prior, lo, hi, fp=None, delta=None, points_per_decade=4600):
        if not 0 < lo < hi:
            raise ValueError("need 0 < lo < hi")
        n = max(64, int(math.log10(hi / lo) * points_per_decade))
        nodes = np.geomspace(lo, hi, n)
        if fp is not None and delta is not None and delta > 0:
            ladder = fp.sigma_inf2 + (delta / 20.0) * 1.25 ** np.arange(0, 40)
            ladder = ladder[(ladder > lo) & (ladder < hi)]
            nodes = np.unique(np.concatenate([nodes, ladder]))
        self.v = nodes
        self.log_v = np.log(nodes)
        self.log_m = np.log(denoiser_mse_batch(prior, nodes))

    def __call__(self, v):
        x = np.log(np.clip(v, self.v[0], self.v[-1]))
        return np.exp(np.interp(x, self.log_v, self.log_m))


def build_grid(config, delta, dsigma_db=0.01, dr=0.05, r_max=16.0, t_max=60,
               margin=0.25):
    """Sigma2 and rate grids for one DP solve.

    The uniform part descends from sigma_1^2 in exact dB steps down to
    sigma_inf2 * (1 + margin * delta / MMSE); below it, a geometric
    ladder of sub-resolution nodes tracks the feasibility boundaries of
    the last few horizons, which contract by theta per horizon.
    """
    fp = fixed_point(config)
    s1 = config.initial_sigma2
    rel_edge = 1.0 + margin * delta / fp.mmse
    low_edge = fp.sigma_inf2 * rel_edge
    if low_edge >= s1:
        low_edge = fp.sigma_inf2 * (1.0 + 0.1 * delta / fp.mmse)
    span_db = max(10.0 * math.log10(s1 / low_edge), 2.0 * dsigma_db)
    n_uniform = int(math.ceil(span_db / dsigma_db)) + 1
    db_steps = 10.0 * math.log10(s1) - dsigma_db * np.arange(n_uniform)
    uniform = 10.0 ** (db_steps / 10.0)
    unit = delta / config.kappa
    depth = max(8.0 / fp.theta**8, (uniform.min() - fp.sigma_inf2) / unit)
    n_ladder = int(math.ceil(math.log(depth / 0.1) / math.log(1.25))) + 1
    ladder = fp.sigma_inf2 + 0.1 * unit * 1.25 ** np.arange(n_ladder)
    nodes = np.concatenate([uniform, ladder])
    nodes = np.unique(nodes[(nodes > fp.sigma_inf2) & (nodes <= s1)])
    if nodes[-1] != s1:
        nodes = np.append(nodes, s1)
    rates = np.round(np.arange(1, int(round(r_max / dr)) + 1) * dr, 12)
    return DPGrid(sigma2=nodes, rates=rates, dsigma_db=dsigma_db, dr=dr,
                  r_max=r_max, t_max=t_max)


def _sigma_target(config, fp, delta):
    """Largest denoiser-input variance whose MSE still meets MMSE + delta."""
    goal = fp.mmse + delta
    lo = fp.sigma_inf2
    hi = max(2.0 * config.initial_sigma2, 2.0 * lo)
    f = lambda v: denoiser_mse(config.prior, v) - goal
    while f(hi) < 0:
        hi *= 4.0
        if hi > 1e12 * lo:
            return math.inf
    return brentq(f, lo, hi, rtol=1e-15, maxiter=200)


class _Solver:
    """Shared state for one DP solve."""

    def __init__(self, config, b, delta, grid, rd, mse_points_per_decade=4600):
        self.config = config
        self.b = float(b)
        self.delta = float(delta)
        self.grid = grid
        self.rd = rd
        self.fp = fixed_point(config)
        self.noop_edge = self.fp.sigma_inf2 + delta / config.kappa
        self.sigma_target = _sigma_target(config, self.fp, delta)
        P = config.nodes
        nodes, rates = grid.sigma2, grid.rates
        dist = np.empty((nodes.size, rates.size))
        for i, s2 in enumerate(nodes):
            dist[i] = rd.distortion_grid(s2, rates)
        self.dist = dist
        inflated = nodes[:, None] + P * dist
        ok = np.isfinite(inflated)
        if not ok.any():
            raise InfeasibleError(
                "no admissible rate anywhere on the grid (the quantizer "
                "bin-size constraint excludes every rate up to r_max)"
            )
        lo = min(self.fp.sigma_inf2 * 0.999, np.nanmin(inflated[ok]))
        hi = max(float(np.nanmax(inflated[ok])) * 1.0001, config.initial_sigma2)
        self.mse_table = _MseTable(config.prior, lo, hi, fp=self.fp, delta=delta,
                                   points_per_decade=mse_points_per_decade)
        next_s = np.full_like(inflated, np.inf)
        next_s[ok] = config.sigma_z2 + self.mse_table(inflated[ok]) / config.kappa
        self.next_sigma2 = next_s
        # feasibility thresholds for the closed-form base case:
        # a single round at rate j from state v succeeds iff v <= thr[i, j]
        thr = self.sigma_target - P * dist
        thr[~np.isfinite(dist)] = -np.inf
        self.base_thresholds = thr
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.dist_min = np.nanmin(dist, axis=1)  # NaN row = no usable rate
        self.x_nodes = self._x(nodes)

    def _x(self, v):
        """Interpolation coordinate ln(sigma2 - sigma_inf2).

        Cost-to-go in the near-converged regime is close to linear in the
        log of the excess variance, so interpolating in this coordinate
        stays accurate through the sub-resolution ladder region where the
        value function steepens toward each horizon's feasibility edge.
        """
        floor = self.fp.sigma_inf2 * 1e-18
        return np.log(np.maximum(np.asarray(v, dtype=float) - self.fp.sigma_inf2,
                                 floor))

    def _nearest_node(self, v):
        x = self._x(v)
        idx = np.clip(np.searchsorted(self.x_nodes, x), 1, self.x_nodes.size - 1)
        left_closer = (x - self.x_nodes[idx - 1]) <= (self.x_nodes[idx] - x)
        return np.where(left_closer, idx - 1, idx)

    def base_rate_index(self, v, node_idx=None):
        """Index into the rate grid of the cheapest feasible final rate,
        or rates.size when no rate suffices; vectorized over v."""
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1)
        idx = self._nearest_node(flat) if node_idx is None else node_idx.reshape(-1)
        out = np.empty(flat.size, dtype=np.int64)
        order = np.argsort(idx, kind="stable")
        sorted_idx = idx[order]
        start = 0
        while start < flat.size:
            node = sorted_idx[start]
            stop = int(np.searchsorted(sorted_idx, node, side="right"))
            sel = order[start:stop]
            out[sel] = np.searchsorted(self.base_thresholds[node], flat[sel])
            start = stop
        return out.reshape(v.shape)

    def phi0(self, v, node_idx=None):
        """Exact base-case cost at arbitrary states (no interpolation)."""
        v = np.asarray(v, dtype=float)
        j = self.base_rate_index(v, node_idx)
        rates_ext = np.append(self.grid.rates, np.inf)
        out = self.b + rates_ext[j]
        return np.where(v <= self.noop_edge, 0.0, out)

    def interp_phi(self, phi_row, v, edge, horizon):
        """Interpolate one Phi row with the inf sentinel excluded.

        Feasible nodes form a prefix of the grid; values interpolate over
        that prefix, queries below the grid clamp to the boundary node,
        queries past the exact feasibility edge are infeasible.  Between
        the last feasible node and the edge the row is extended by a
        synthetic knot at the edge itself: every feasible chain from there
        is forced to the top rate each round, so the cost-to-go approaches
        (horizon + 1) * (b + r_max).  Without this knot the band looks
        flat and cheap and the optimizer steers into it.
        """
        v = np.asarray(v, dtype=float)
        finite = np.isfinite(phi_row)
        if not finite.any():
            return np.full(v.shape, np.inf)
        m = int(np.nonzero(finite)[0][-1])
        xs = self.x_nodes[: m + 1]
        ys = phi_row[: m + 1]
        if math.isfinite(edge):
            x_edge = float(self._x(edge))
            if x_edge > xs[-1] + 1e-12:
                cap = (horizon + 1) * (self.b + self.grid.rates[-1])
                xs = np.append(xs, x_edge)
                ys = np.append(ys, max(cap, ys[-1]))
        vals = np.interp(self._x(v), xs, ys)
        return np.where(v <= edge, vals, np.inf)

    def _next_edge(self, prev_edge):
        """Exact largest state from which one more round can reach a state
        inside ``prev_edge``; bisection on the monotone best-case map."""
        if not math.isfinite(prev_edge):
            return math.inf

        def best_next(v):
            arr = np.asarray([v])
            node = self._nearest_node(arr)[0]
            d = self.dist_min[node]
            if not np.isfinite(d):
                return math.inf
            inflated = np.asarray([v + self.config.nodes * d])
            return float(self.config.sigma_z2
                         + self.mse_table(inflated)[0] / self.config.kappa)

        s1 = self.config.initial_sigma2
        if best_next(s1) <= prev_edge:
            return math.inf
        lo, hi = prev_edge, s1
        if best_next(lo) > prev_edge:
            return prev_edge
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if best_next(mid) <= prev_edge:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-14 * hi:
                break
        return lo

    def run_backward(self, t_max, stop_after=3, full_horizon=False):
        """Build Phi tables until the start-state cost stops improving."""
        n_nodes = self.grid.sigma2.size
        rates = self.grid.rates
        phi_rows, arg_rows = [], []
        j0 = self.base_rate_index(self.grid.sigma2, node_idx=np.arange(n_nodes))
        rates_ext = np.append(rates, np.inf)
        row0 = self.b + rates_ext[j0]
        arg0 = np.where(j0 < rates.size, rates_ext[np.minimum(j0, rates.size - 1)],
                        np.nan)
        idle0 = self.grid.sigma2 <= self.noop_edge
        row0 = np.where(idle0, 0.0, row0)
        arg0 = np.where(idle0, 0.0, arg0)
        arg0 = np.where(np.isfinite(row0), arg0, np.nan)
        phi_rows.append(row0)
        arg_rows.append(arg0)
        edges = [self.sigma_target]
        start_costs = [row0[-1]]
        stall = 0
        for k in range(1, t_max):
            prev = phi_rows[-1]
            if k == 1:
                cont = self.phi0(self.next_sigma2)
            else:
                cont = self.interp_phi(prev, self.next_sigma2, edges[k - 1], k - 1)
            cand = self.b + rates[None, :] + cont
            cand[~np.isfinite(self.dist)] = np.inf
            jbest = np.argmin(cand, axis=1)
            best = cand[np.arange(n_nodes), jbest]
            idle = prev <= best + _IDLE_EPS
            row = np.where(idle, prev, best)
            arg = np.where(idle, 0.0, rates[jbest])
            arg = np.where(np.isfinite(row), arg, np.nan)
            phi_rows.append(row)
            arg_rows.append(arg)
            edges.append(self._next_edge(edges[k - 1]))
            start_costs.append(row[-1])
            if start_costs[-1] >= start_costs[-2] - _IDLE_EPS:
                stall += 1
            else:
                stall = 0
            if not full_horizon and stall >= stop_after and np.isfinite(start_costs[-1]):
                break
        table = DPTable(grid=self.grid, phi=np.vstack(phi_rows),
                        argrate=np.vstack(arg_rows), edges=np.asarray(edges))
        return table, np.asarray(start_costs)

    def enumerate_exact(self, t_max):
        """Exhaustive search over rate-grid schedules up to length t_max.

        Viable only for tiny search spaces; distortions and feasibility
        use the exact visited state, so the result is optimal for the
        discretized rate space with no grid-interpolation effects.
        Returns (cost, rates) with rates=None when nothing is feasible.
        """
        rates = self.grid.rates
        P = self.config.nodes
        best = [math.inf, None]

        def descend(v, cost, depth, prefix):
            dist = self.rd.distortion_grid(v, rates)
            for j, rate in enumerate(rates):
                step_cost = cost + self.b + rate
                if step_cost >= best[0]:
                    break
                if not np.isfinite(dist[j]):
                    continue
                inflated = v + P * dist[j]
                if inflated <= self.sigma_target:
                    best[0] = step_cost
                    best[1] = prefix + [float(rate)]
                    continue
                if depth + 1 < t_max:
                    nxt = self.config.sigma_z2 \
                        + float(self.mse_table(np.asarray([inflated]))[0]) \
                        / self.config.kappa
                    descend(nxt, step_cost, depth + 1, prefix + [float(rate)])

        start = self.config.initial_sigma2
        if start <= self.noop_edge:
            return 0.0, []
        descend(start, 0.0, 0, [])
        return best[0], best[1]

    def extract(self, table, k_star, allow_idle=True):
        """Walk forward from sigma_1^2 along the Bellman-optimal rates.

        Distortions along the walk use the exact visited state rather
        than its nearest grid node; continuation costs come from the
        stored tables (the base level is evaluated in closed form).  With
        ``allow_idle`` disabled the walk spends every remaining round,
        which turns the horizon index into an exact schedule length and
        lets the caller compare nearby horizons by realized cost.
        """
        rates = self.grid.rates
        P = self.config.nodes
        v = self.config.initial_sigma2
        out = []
        for k in range(k_star, -1, -1):
            if v <= self.noop_edge:
                break
            if k == 0:
                dist = self.rd.distortion_grid(v, rates)
                feasible = v + P * np.where(np.isfinite(dist), dist, np.inf) \
                    <= self.sigma_target
                if feasible.any():
                    out.append(float(rates[int(np.argmax(feasible))]))
                else:
                    # interpolation noise left the end state marginally short;
                    # send at the top rate and let verification repair it
                    out.append(float(rates[-1]))
                break
            dist = self.rd.distortion_grid(v, rates)
            ok = np.isfinite(dist)
            inflated = v + P * np.where(ok, dist, 0.0)
            nxt = np.where(
                ok,
                self.config.sigma_z2 + self.mse_table(inflated) / self.config.kappa,
                np.inf,
            )
            if k - 1 == 0:
                cont = self.phi0(nxt)
            else:
                cont = self.interp_phi(table.phi[k - 1], nxt, table.edges[k - 1], k - 1)
            cand = self.b + rates + cont
            cand[~ok] = np.inf
            if k - 1 == 0:
                idle_cost = self.phi0(np.array([v]))[0]
            else:
                idle_cost = self.interp_phi(table.phi[k - 1], np.array([v]),
                                            table.edges[k - 1], k - 1)[0]
            jbest = int(np.argmin(cand))
            if allow_idle and idle_cost <= cand[jbest] + _IDLE_EPS:
                continue
            if not np.isfinite(cand[jbest]):
                out.append(float(rates[-1]))
                v = float(nxt[-1]) if np.isfinite(nxt[-1]) else v
                continue
            out.append(float(rates[jbest]))
            v = float(nxt[jbest])
        return out


def solve(config, b, delta, rd, grid=None, dsigma_db=0.01, dr=0.05, r_max=16.0,
          t_max=60, full_horizon=False, mse_points_per_decade=4600):
    """Optimal coding-rate sequence for target excess MSE ``delta``.

    Returns (DPTable, RateSchedule).  The returned schedule is verified
    against the state-evolution roll-out; if interpolation error leaves
    the end state marginally short, the final rate is nudged up the rate
    grid until the target is met.  Raises InfeasibleError when no
    schedule within the search space reaches the target.
    """
    if delta <= 0:
        raise ValueError("target excess MSE must be positive")
    fp = fixed_point(config)
    power = config.signal_power
    if delta >= power - fp.mmse:
        empty_grid = grid or build_grid(config, delta, dsigma_db, dr, r_max, t_max)
        table = DPTable(grid=empty_grid,
                        phi=np.zeros((1, empty_grid.sigma2.size)),
                        argrate=np.zeros((1, empty_grid.sigma2.size)))
        traj = tuple(run_schedule(config, []))
        return table, RateSchedule(rates=(), b=float(b), delta=float(delta),
                                   trajectory=traj)
    if grid is None:
        grid = build_grid(config, delta, dsigma_db, dr, r_max, t_max)
    solver = _Solver(config, b, delta, grid, rd,
                     mse_points_per_decade=mse_points_per_decade)
    table, start_costs = solver.run_backward(grid.t_max, full_horizon=full_horizon)
    if not np.isfinite(start_costs.min()):
        raise InfeasibleError(
            f"target delta={delta:.3e} unreachable within t_max={grid.t_max} "
            f"iterations and r_max={grid.r_max} bits"
        )
    # tiny search spaces afford exhaustive extraction, which removes grid
    # interpolation from the result entirely (exact for the rate grid)
    tree_size = sum(grid.rates.size**d for d in range(1, grid.t_max + 1))
    if tree_size <= 3000:
        cost, rates = solver.enumerate_exact(grid.t_max)
        if rates is None:
            raise InfeasibleError(
                f"target delta={delta:.3e} unreachable by any schedule on "
                f"the rate grid within t_max={grid.t_max} iterations"
            )
        return table, _verified_schedule(config, rates, b, delta, rd, grid)
    # The tables steer the walk but interpolation smears the rate-grid
    # staircase by up to half a step, so nearby horizons can swap order.
    # Extract every near-optimal horizon, realize each schedule exactly,
    # and keep the cheapest (ties break toward earlier termination).
    k_star = int(np.nonzero(start_costs <= start_costs.min() + _IDLE_EPS)[0][0])
    window = b + grid.dr + 1e-9
    candidates = [k for k, c in enumerate(start_costs)
                  if np.isfinite(c) and c <= start_costs.min() + window]
    if len(candidates) > 8:
        candidates = candidates[:8]
    proposals = {tuple(solver.extract(table, k_star, allow_idle=True))}
    for k in candidates:
        proposals.add(tuple(solver.extract(table, k, allow_idle=False)))
    best, failure = None, None
    for rates in proposals:
        try:
            sched = _verified_schedule(config, list(rates), b, delta, rd, grid)
        except NumericalError as exc:
            failure = exc
            continue
        if best is None or (sched.cost, sched.t) < (best.cost, best.t):
            best = sched
    if best is None:
        raise failure
    return table, best


def _verified_schedule(config, rates, b, delta, rd, grid):
    """Attach the SE trajectory; nudge the final rate up if needed.

    Interpolation error can leave the extracted end state marginally past
    the target; raising the last rate (or, at the top of the rate grid,
    appending one more round) restores feasibility at minimal extra cost.
    """
    rates = [r for r in rates if r > 0]
    appended = 0
    for _ in range(400):
        traj = run_schedule(config, rates, rd)
        if not rates or traj[-1].emse <= delta * (1 + 1e-9):
            return RateSchedule(rates=tuple(rates), b=float(b), delta=float(delta),
                                trajectory=tuple(traj))
        if rates[-1] + grid.dr > grid.r_max + 1e-9:
            if appended >= 3:
                raise NumericalError(
                    f"extracted schedule misses the target (emse "
                    f"{traj[-1].emse:.4e} > delta {delta:.4e}) even after "
                    f"appending {appended} extra rounds"
                )
            rates.append(grid.dr)
            appended += 1
        else:
            rates[-1] = round(rates[-1] + grid.dr, 12)
    raise NumericalError("final-rate repair did not converge")


def verify_interpolation(config, b, delta, rd, coarse_db=0.01, fine_db=0.0025,
                         dr=0.1, r_max=16.0, t_max=None, quantiles=(50, 90, 99),
                         interior_only=True):
    """Compare cost-to-go tables across two sigma2 resolutions.

    The fine resolution must divide the coarse one so the coarse nodes
    embed in the fine grid; the report summarizes Phi differences at the
    shared nodes over all horizons where both are finite.  States between
    one horizon's feasibility edge and the next hold boundary-layer
    values (chains forced to the top rate), whose magnitude reflects the
    edge position rather than the interpolation scheme; by default the
    comparison keeps only nodes feasible at the previous horizon too and
    counts the excluded band separately.
    """
    ratio = coarse_db / fine_db
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("fine resolution must divide the coarse resolution")
    if t_max is None:
        _, sched = solve(config, b, delta, rd, dsigma_db=coarse_db, dr=dr,
                         r_max=r_max)
        t_max = max(sched.t + 3, 6)
    tables = {}
    for db in (coarse_db, fine_db):
        grid = build_grid(config, delta, dsigma_db=db, dr=dr, r_max=r_max,
                          t_max=t_max)
        solver = _Solver(config, b, delta, grid, rd)
        table, _ = solver.run_backward(t_max, full_horizon=True)
        tables[db] = table
    coarse, fine = tables[coarse_db], tables[fine_db]
    # match nodes by value (the uniform dB sections coincide by construction)
    ci = {}
    fi_vals = fine.grid.sigma2
    pos = np.searchsorted(fi_vals, coarse.grid.sigma2)
    for i, p in enumerate(pos):
        for cand in (p - 1, p, p + 1):
            if 0 <= cand < fi_vals.size and np.isclose(
                fi_vals[cand], coarse.grid.sigma2[i], rtol=1e-9, atol=0.0
            ):
                ci[i] = cand
                break
    k_common = min(coarse.phi.shape[0], fine.phi.shape[0])
    diffs = []
    sentinel_mismatch = 0
    boundary_band = 0
    for k in range(k_common):
        if interior_only and k >= 1:
            inner = min(coarse.edges[k - 1], fine.edges[k - 1])
        else:
            inner = math.inf
        for i, j in ci.items():
            a, bb = coarse.phi[k, i], fine.phi[k, j]
            fa, fb = np.isfinite(a), np.isfinite(bb)
            if fa and fb:
                if coarse.grid.sigma2[i] <= inner:
                    diffs.append(a - bb)
                else:
                    boundary_band += 1
            elif fa != fb:
                sentinel_mismatch += 1
    diffs = np.asarray(diffs)
    report = {
        "n_compared": int(diffs.size),
        "n_boundary_band": int(boundary_band),
        "n_sentinel_mismatch": int(sentinel_mismatch),
        "abs_quantiles": {q: float(np.percentile(np.abs(diffs), q)) for q in quantiles},
        "max_abs": float(np.max(np.abs(diffs))) if diffs.size else 0.0,
        "horizons": int(k_common),
        "matched_nodes": len(ci),
        "diffs": diffs,
    }
    return report


def verify_rate_resolution(config, schedule, rd, dr, trials, seed=0):
    """Random rate perturbations of an optimal schedule.

    Each rate moves by U[-dr/2, +dr/2]; among perturbed sequences whose
    final EMSE does not exceed the original's, reports the change in
    aggregate rate.  Improvements can only be marginal: at least
    -T * dr / 2 by construction.
    """
    rng = np.random.default_rng(seed)
    base = np.asarray(schedule.rates, dtype=float)
    base_emse = schedule.final_emse
    deltas, qualified = [], 0
    for _ in range(trials):
        beta = rng.uniform(-dr / 2.0, dr / 2.0, size=base.size)
        pert = np.clip(base + beta, 0.0, None)
        try:
            traj = run_schedule(config, pert, rd)
        except Exception:
            continue
        if traj[-1].emse <= base_emse:
            qualified += 1
            deltas.append(float(pert.sum() - base.sum()))
    deltas = np.asarray(deltas)
    improved = int(np.sum(deltas < 0)) if deltas.size else 0
    return {
        "trials": trials,
        "qualified": qualified,
        "improved": improved,
        "fraction_improved_of_qualified": improved / qualified if qualified else 0.0,
        "fraction_improved_of_trials": improved / trials,
        "delta_r_agg": deltas,
        "bound": -schedule.t * dr / 2.0,
    }
