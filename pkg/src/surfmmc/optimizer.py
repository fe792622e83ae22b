"""Method of moving asymptotes with a single general constraint.

One step builds the separable convex subproblem around the current iterate
(asymptotes expand by 1.2 on monotone progress and contract by 0.7 on
oscillation) and solves it with a primal-dual interior Newton method driven
to tight KKT residuals, so the outer loop is deterministic and reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericalError
from .mmc import DesignState

ASY_INIT = 0.5
ASY_INCR = 1.2
ASY_DECR = 0.7
# a tighter minimum asymptote gap than the classic 0.01 lets the oscillation
# amplitude around a converged design fall below the stopping tolerance
ASY_MIN_FACTOR = 1e-5
ASY_MAX_FACTOR = 10.0
ALBEFA = 0.1
RAA0 = 1e-5
SUBPROBLEM_KKT = 1e-9
DEFAULT_MOVE = 0.1
DEFAULT_C = 1000.0


@dataclass
class MmaState:
    low: np.ndarray
    upp: np.ndarray
    x_prev1: np.ndarray | None = None
    x_prev2: np.ndarray | None = None
    iteration: int = 0
    move_limit: float = DEFAULT_MOVE

    @classmethod
    def initial(cls, n: int, move_limit: float = DEFAULT_MOVE) -> "MmaState":
        return cls(np.zeros(n), np.ones(n), None, None, 0, move_limit)


@dataclass(frozen=True)
class StopRule:
    tol: float = 0.001
    max_iters: int = 500

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class HistoryRecord:
    iteration: int
    objective: float
    constraint: float
    max_rel_change: float
    report: dict = field(default_factory=dict)


def _unpack_design(design, lower, upper):
    if isinstance(design, DesignState):
        return design.flatten(), design.lower, design.upper, design
    x = np.asarray(design, dtype=np.float64)
    if lower is None or upper is None:
        raise ValueError("lower/upper bounds required for raw design vectors")
    return x, np.asarray(lower, np.float64), np.asarray(upper, np.float64), None


def mma_step(design, f0, df0, fval, dfdx, state: MmaState,
             lower=None, upper=None):
    """One MMA update.  design: DesignState or array (then bounds required).

    fval / dfdx describe constraints in "<= 0" form, shapes (m,) and (m, n).
    Returns (updated design, new state); the iterate respects the box bounds
    and the per-step move limit exactly.
    """
    x, lb, ub, ds = _unpack_design(design, lower, upper)
    n = len(x)
    df0 = np.asarray(df0, dtype=np.float64)
    fval = np.atleast_1d(np.asarray(fval, dtype=np.float64))
    dfdx = np.atleast_2d(np.asarray(dfdx, dtype=np.float64))
    m = len(fval)
    if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(dfdx))):
        raise NumericalError("non-finite gradients passed to the optimizer")

    it = state.iteration + 1
    span = np.maximum(ub - lb, 1e-12)
    if it <= 2 or state.x_prev1 is None or state.x_prev2 is None:
        low = x - ASY_INIT * span
        upp = x + ASY_INIT * span
    else:
        osc = (x - state.x_prev1) * (state.x_prev1 - state.x_prev2)
        factor = np.ones(n)
        factor[osc > 0] = ASY_INCR
        factor[osc < 0] = ASY_DECR
        low = x - factor * (state.x_prev1 - state.low)
        upp = x + factor * (state.upp - state.x_prev1)
        low = np.clip(low, x - ASY_MAX_FACTOR * span, x - ASY_MIN_FACTOR * span)
        upp = np.clip(upp, x + ASY_MIN_FACTOR * span, x + ASY_MAX_FACTOR * span)

    move = state.move_limit
    alfa = np.maximum.reduce([low + ALBEFA * (x - low), x - move * span, lb])
    beta = np.minimum.reduce([upp - ALBEFA * (upp - x), x + move * span, ub])

    ux1 = upp - x
    xl1 = x - low
    xmami_inv = 1.0 / span
    p0 = np.maximum(df0, 0.0)
    q0 = np.maximum(-df0, 0.0)
    pq0 = 0.001 * (p0 + q0) + RAA0 * xmami_inv
    p0 = (p0 + pq0) * ux1 ** 2
    q0 = (q0 + pq0) * xl1 ** 2
    pmat = np.maximum(dfdx, 0.0)
    qmat = np.maximum(-dfdx, 0.0)
    pq = 0.001 * (pmat + qmat) + RAA0 * xmami_inv[None, :]
    pmat = (pmat + pq) * ux1[None, :] ** 2
    qmat = (qmat + pq) * xl1[None, :] ** 2
    b = pmat @ (1.0 / ux1) + qmat @ (1.0 / xl1) - fval

    x_new = _subsolve(low, upp, alfa, beta, p0, q0, pmat, qmat, b,
                      a0=1.0, a=np.zeros(m), c=np.full(m, DEFAULT_C),
                      d=np.ones(m))
    new_state = replace(state, low=low, upp=upp, x_prev2=state.x_prev1,
                        x_prev1=x.copy(), iteration=it)
    if ds is not None:
        return ds.unflatten(x_new), new_state
    return x_new, new_state


def _subsolve(low, upp, alfa, beta, p0, q0, pmat, qmat, b, a0, a, c, d):
    """Primal-dual interior Newton solve of the separable MMA subproblem."""
    n = len(low)
    m = len(b)
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = np.ones(m)
    z = 1.0
    lam = np.ones(m)
    xsi = np.maximum(1.0 / np.maximum(x - alfa, 1e-30), 1.0)
    eta = np.maximum(1.0 / np.maximum(beta - x, 1e-30), 1.0)
    mu = np.maximum(np.ones(m), 0.5 * c)
    zet = 1.0
    s = np.ones(m)

    def residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1 = upp - x
        xl1 = x - low
        plam = p0 + pmat.T @ lam
        qlam = q0 + qmat.T @ lam
        gvec = pmat @ (1.0 / ux1) + qmat @ (1.0 / xl1)
        rex = plam / ux1 ** 2 - qlam / xl1 ** 2 - xsi + eta
        rey = c + d * y - mu - lam
        rez = a0 - zet - a @ lam
        relam = gvec - a * z - y + s - b
        rexsi = xsi * (x - alfa) - epsi
        reeta = eta * (beta - x) - epsi
        remu = mu * y - epsi
        rezet = zet * z - epsi
        res = lam * s - epsi
        full = np.concatenate([rex, rey, [rez], relam, rexsi, reeta,
                               remu, [rezet], res])
        return full

    while epsi > SUBPROBLEM_KKT:
        residu = residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        residunorm = np.linalg.norm(residu)
        residumax = np.abs(residu).max()
        inner = 0
        while residumax > 0.9 * epsi and inner < 200:
            inner += 1
            ux1 = upp - x
            xl1 = x - low
            plam = p0 + pmat.T @ lam
            qlam = q0 + qmat.T @ lam
            gvec = pmat @ (1.0 / ux1) + qmat @ (1.0 / xl1)
            gg = pmat / ux1[None, :] ** 2 - qmat / xl1[None, :] ** 2
            delx = plam / ux1 ** 2 - qlam / xl1 ** 2 \
                - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2.0 * (plam / ux1 ** 3 + qlam / xl1 ** 3) \
                + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1.0 / diagy

            # m is small: solve the (m+1) system in (dlam, dz)
            blam = dellam + dely / diagy - gg @ (delx / diagx)
            aa = np.empty((m + 1, m + 1))
            aa[:m, :m] = np.diag(diaglamyi) + (gg / diagx[None, :]) @ gg.T
            aa[:m, m] = a
            aa[m, :m] = a
            aa[m, m] = -zet / z
            bb = np.concatenate([blam, [delz]])
            try:
                solut = np.linalg.solve(aa, bb)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"MMA subproblem Newton failed: {exc}")
            dlam = solut[:m]
            dz = solut[m]
            dx = -delx / diagx - (gg.T @ dlam) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - xsi * dx / (x - alfa)
            deta = -eta + epsi / (beta - x) + eta * dx / (beta - x)
            dmu = -mu + epsi / y - mu * dy / y
            dzet = -zet + epsi / z - zet * dz / z
            ds_ = -s + epsi / lam - s * dlam / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds_])
            stmxx = np.max(-1.01 * dxx / xx)
            stmalfa = np.max(-1.01 * dx / (x - alfa))
            stmbeta = np.max(1.01 * dx / (beta - x))
            steg = 1.0 / max(stmxx, stmalfa, stmbeta, 1.0)

            xold, yold, zold = x.copy(), y.copy(), z
            lamold, xsiold, etaold = lam.copy(), xsi.copy(), eta.copy()
            muold, zetold, sold = mu.copy(), zet, s.copy()
            resinew = 2.0 * residunorm
            itto = 0
            while resinew > residunorm and itto < 50:
                itto += 1
                x = xold + steg * dx
                y = yold + steg * dy
                z = zold + steg * dz
                lam = lamold + steg * dlam
                xsi = xsiold + steg * dxsi
                eta = etaold + steg * deta
                mu = muold + steg * dmu
                zet = zetold + steg * dzet
                s = sold + steg * ds_
                residu = residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                resinew = np.linalg.norm(residu)
                steg *= 0.5
            residunorm = resinew
            residumax = np.abs(residu).max()
        epsi *= 0.1
    return x


def max_relative_change(x_new, x_old, lower, upper) -> float:
    span = np.maximum(np.asarray(upper) - np.asarray(lower), 1e-12)
    return float(np.max(np.abs(x_new - x_old) / span))


def run(evaluate, design0, stop: StopRule, lower=None, upper=None,
        move_limit: float = DEFAULT_MOVE, on_record=None):
    """Drive MMA until the design stops moving or max_iters is reached.

    evaluate(x) -> (f0, df0, fval, dfdx, report_dict); report_dict entries
    are copied into the history.  on_record(record, x) is called after every
    history append (including the initial evaluation, iteration 0), which is
    the hook for incremental persistence.  Returns (x_final, history).
    """
    x, lb, ub, ds = _unpack_design(design0, lower, upper)
    x = np.clip(x, lb, ub)
    state = MmaState.initial(len(x), move_limit)
    history = []

    def record(it, ev, change):
        f0, _, fval, _, report = ev
        rec = HistoryRecord(it, float(f0), float(np.max(np.atleast_1d(fval))),
                            change, dict(report))
        history.append(rec)
        if on_record is not None:
            on_record(rec, x)
        return rec

    ev = _evaluated(evaluate, x)
    record(0, ev, float("nan"))
    for it in range(1, stop.max_iters + 1):
        f0, df0, fval, dfdx, _ = ev
        x_new, state = mma_step(x, f0, df0, fval, dfdx, state,
                                lower=lb, upper=ub)
        change = max_relative_change(x_new, x, lb, ub)
        x = x_new
        ev = _evaluated(evaluate, x)
        record(it, ev, change)
        if change < stop.tol:
            break
    if ds is not None:
        return ds.unflatten(x), history
    return x, history


def _evaluated(evaluate, x):
    out = evaluate(x)
    if len(out) == 4:
        f0, df0, fval, dfdx = out
        return f0, df0, fval, dfdx, {}
    return out
