"""
Backend-agnostic MILP container.

Models are built with MilpModel/LinExpr, solved through pulp (CBC by default),
checked independently with check_feasibility, and cross-checked on tiny
instances with brute_force_solve. Models are written through pulp as LP or MPS
files, and MPS files read back into a MilpModel.
"""
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pulp
from scipy.optimize import linprog

try:
    from backend.settings import DEFAULT_BACKEND, SolverSettings, get_solver_settings
except ImportError:
    from .backend.settings import DEFAULT_BACKEND, SolverSettings, get_solver_settings

logger = logging.getLogger(__name__)

INTEGRALITY_TOLERANCE = 1e-6
BRUTE_FORCE_MAX_INTEGER = 8
BRUTE_FORCE_MAX_CONTINUOUS_GRID = 4
BRUTE_FORCE_MAX_COMBINATIONS = 200_000


class MilpError(RuntimeError):
    pass


class VarKind(str, Enum):
    CONTINUOUS = "continuous"
    INTEGER = "integer"
    BINARY = "binary"


class Sense(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    TIMEOUT = "timeout"

    @property
    def has_solution(self):
        return self in (SolveStatus.OPTIMAL, SolveStatus.FEASIBLE)


@dataclass(frozen=True)
class Variable:
    name: str
    kind: VarKind = VarKind.CONTINUOUS
    lower: Optional[float] = 0.0  # None is -inf
    upper: Optional[float] = None  # None is +inf

    @property
    def is_integer(self):
        return self.kind != VarKind.CONTINUOUS

    def __add__(self, other):
        return LinExpr.of(self) + other

    __radd__ = __add__

    def __sub__(self, other):
        return LinExpr.of(self) - other

    def __rsub__(self, other):
        return LinExpr.of(other) - self

    def __mul__(self, k):
        return LinExpr.of(self) * k

    __rmul__ = __mul__

    def __neg__(self):
        return LinExpr.of(self) * -1


Term = Union["LinExpr", Variable, int, float]


class LinExpr:
    """Sparse linear expression: coefficients by variable name plus a constant."""
    __slots__ = ("terms", "constant")

    def __init__(self, terms: Optional[Dict[str, float]] = None, constant: float = 0.0):
        self.terms = dict(terms or {})
        self.constant = float(constant)

    @classmethod
    def of(cls, item: Term) -> "LinExpr":
        if isinstance(item, LinExpr):
            return item
        if isinstance(item, Variable):
            return cls({item.name: 1.0})
        if isinstance(item, (int, float, np.floating, np.integer)):
            return cls(constant=float(item))
        raise TypeError(f"cannot use {type(item).__name__} in a linear expression")

    @classmethod
    def total(cls, items: Iterable[Term]) -> "LinExpr":
        out = cls()
        for item in items:
            out.add(item)
        return out

    def add(self, item: Term, coef: float = 1.0) -> "LinExpr":
        """In-place accumulate coef * item."""
        other = LinExpr.of(item)
        for name, c in other.terms.items():
            self.terms[name] = self.terms.get(name, 0.0) + coef * c
        self.constant += coef * other.constant
        return self

    def copy(self):
        return LinExpr(self.terms, self.constant)

    def __add__(self, other):
        return self.copy().add(other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.copy().add(other, -1.0)

    def __rsub__(self, other):
        return LinExpr.of(other).copy().add(self, -1.0)

    def __mul__(self, k):
        if not isinstance(k, (int, float, np.floating, np.integer)):
            raise TypeError("expressions can only be scaled by numbers")
        return LinExpr({n: c * k for n, c in self.terms.items()}, self.constant * k)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    def value(self, assignment: Dict[str, float]) -> float:
        return self.constant + sum(c * assignment[n] for n, c in self.terms.items())

    def __repr__(self):
        return f"LinExpr({self.terms}, {self.constant})"


@dataclass(frozen=True)
class Constraint:
    """sum(coef * var) <sense> rhs, terms sorted in insertion order."""
    name: str
    terms: Tuple[Tuple[str, float], ...]
    sense: Sense
    rhs: float

    def lhs_value(self, assignment):
        return sum(c * assignment[n] for n, c in self.terms)

    def violation(self, assignment) -> float:
        lhs = self.lhs_value(assignment)
        if self.sense == Sense.LE:
            return max(0.0, lhs - self.rhs)
        if self.sense == Sense.GE:
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


class MilpModel:
    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: Dict[str, Variable] = {}
        self.constraints: List[Constraint] = []
        self._constraint_names = set()
        self.objective = LinExpr()
        # named sub-expressions, e.g. per-slice cost components
        self.parts: Dict[str, LinExpr] = {}

    def add_variable(self, name, kind=VarKind.CONTINUOUS, lower: Optional[float] = 0.0,
                     upper: Optional[float] = None) -> Variable:
        if name in self.variables:
            raise MilpError(f"duplicate variable {name}")
        kind = VarKind(kind)
        if kind == VarKind.BINARY:
            lower = 0.0 if lower is None else max(0.0, lower)
            upper = 1.0 if upper is None else min(1.0, upper)
        if lower is not None and upper is not None and lower > upper:
            raise MilpError(f"variable {name}: lower bound {lower} above upper bound {upper}")
        var = Variable(name, kind, None if lower is None else float(lower), None if upper is None else float(upper))
        self.variables[name] = var
        return var

    def var(self, name) -> Variable:
        return self.variables[name]

    def _check_terms(self, expr: LinExpr, where: str):
        unknown = [n for n in expr.terms if n not in self.variables]
        if unknown:
            raise MilpError(f"{where} references undeclared variables: {unknown[:5]}")

    def add_constraint(self, name, lhs: Term, sense: Union[Sense, str], rhs: Term = 0.0) -> Constraint:
        if name in self._constraint_names:
            raise MilpError(f"duplicate constraint {name}")
        expr = LinExpr.of(lhs) - LinExpr.of(rhs)
        self._check_terms(expr, f"constraint {name}")
        terms = tuple((n, c) for n, c in expr.terms.items() if c != 0.0)
        constraint = Constraint(name, terms, Sense(sense), -expr.constant)
        self.constraints.append(constraint)
        self._constraint_names.add(name)
        return constraint

    def set_objective(self, expr: Term):
        expr = LinExpr.of(expr)
        self._check_terms(expr, "objective")
        self.objective = LinExpr({n: c for n, c in expr.terms.items() if c != 0.0}, expr.constant)

    def with_objective(self, expr: Term) -> "MilpModel":
        """Copy sharing variables and constraints, with a different objective."""
        other = MilpModel(self.name)
        other.variables = dict(self.variables)
        other.constraints = list(self.constraints)
        other._constraint_names = set(self._constraint_names)
        other.parts = dict(self.parts)
        other.set_objective(expr)
        return other

    @property
    def integer_variables(self) -> List[Variable]:
        return [v for v in self.variables.values() if v.is_integer]

    @property
    def continuous_variables(self) -> List[Variable]:
        return [v for v in self.variables.values() if not v.is_integer]

    def objective_value(self, assignment) -> float:
        return self.objective.value(assignment)

    def stats(self) -> Dict[str, int]:
        return {
            "variables": len(self.variables),
            "integer": len(self.integer_variables),
            "constraints": len(self.constraints),
        }


@dataclass
class MilpSolution:
    status: SolveStatus
    assignment: Dict[str, float] = field(default_factory=dict)
    objective_value: float = math.nan
    solve_time: float = 0.0
    enumerated: int = 0

    def value(self, name, default=0.0) -> float:
        return self.assignment.get(name, default)


# --- Solving ---

_PULP_KIND = {
    VarKind.CONTINUOUS: pulp.LpContinuous,
    VarKind.INTEGER: pulp.LpInteger,
    VarKind.BINARY: pulp.LpBinary,
}
_PULP_SENSE = {Sense.LE: pulp.LpConstraintLE, Sense.EQ: pulp.LpConstraintEQ, Sense.GE: pulp.LpConstraintGE}

_SOL_STATUS = {
    pulp.LpSolutionOptimal: SolveStatus.OPTIMAL,
    pulp.LpSolutionIntegerFeasible: SolveStatus.FEASIBLE,
    pulp.LpSolutionInfeasible: SolveStatus.INFEASIBLE,
    pulp.LpSolutionUnbounded: SolveStatus.UNBOUNDED,
    pulp.LpSolutionNoSolutionFound: SolveStatus.TIMEOUT,
}
_LP_STATUS = {
    pulp.LpStatusOptimal: SolveStatus.OPTIMAL,
    pulp.LpStatusNotSolved: SolveStatus.TIMEOUT,
    pulp.LpStatusInfeasible: SolveStatus.INFEASIBLE,
    pulp.LpStatusUnbounded: SolveStatus.UNBOUNDED,
    pulp.LpStatusUndefined: SolveStatus.INFEASIBLE,
}


def make_backend(settings: SolverSettings):
    """pulp solver for the configured backend; unusable backends fall back to bundled CBC."""
    kwargs = dict(msg=False, timeLimit=settings.time_limit, gapRel=settings.mip_gap, threads=settings.threads)
    if settings.backend == DEFAULT_BACKEND and settings.seed:
        kwargs["options"] = [f"randomCbcSeed {settings.seed}"]
    try:
        solver = pulp.getSolver(settings.backend, **kwargs)
        if solver.available():
            return solver
        reason = "not installed"
    except pulp.PulpSolverError as e:
        reason = str(e)
    if settings.backend != DEFAULT_BACKEND:
        print(f"⚠️ SOLVER WARNING: backend {settings.backend} unusable ({reason}). "
              f"Falling back to {DEFAULT_BACKEND}.")
        return make_backend(settings.merged(backend=DEFAULT_BACKEND))
    raise MilpError(f"solver backend {settings.backend} unavailable: {reason}")


def _holds(lhs: float, sense: Sense, rhs: float, tol: float) -> bool:
    if sense == Sense.LE:
        return lhs <= rhs + tol
    if sense == Sense.GE:
        return lhs >= rhs - tol
    return abs(lhs - rhs) <= tol


def _clean_value(var: Variable, value: Optional[float]) -> float:
    value = 0.0 if value is None else float(value)
    if var.is_integer and abs(value - round(value)) <= INTEGRALITY_TOLERANCE:
        value = float(round(value))
    if var.lower is not None and var.lower - 1e-7 <= value < var.lower:
        value = var.lower
    if var.upper is not None and var.upper < value <= var.upper + 1e-7:
        value = var.upper
    return value + 0.0  # drop negative zero


def to_pulp(model: MilpModel, constraints: Optional[Iterable[Constraint]] = None):
    """(LpProblem, {name: LpVariable}) for the model; `constraints` defaults to every row."""
    prob = pulp.LpProblem(model.name, pulp.LpMinimize)
    pvars = {
        v.name: pulp.LpVariable(v.name, lowBound=v.lower, upBound=v.upper, cat=_PULP_KIND[v.kind])
        for v in model.variables.values()
    }
    prob += pulp.LpAffineExpression([(pvars[n], c) for n, c in model.objective.terms.items()],
                                    constant=model.objective.constant)
    for c in model.constraints if constraints is None else constraints:
        expr = pulp.LpAffineExpression([(pvars[n], k) for n, k in c.terms])
        prob += pulp.LpConstraint(expr, sense=_PULP_SENSE[c.sense], rhs=c.rhs, name=c.name)
    return prob, pvars


def solve(model: MilpModel, time_limit: Optional[float] = None, mip_gap: Optional[float] = None,
          settings: Optional[SolverSettings] = None) -> MilpSolution:
    settings = (settings or get_solver_settings()).merged(time_limit=time_limit, mip_gap=mip_gap)
    start = time.perf_counter()

    # Rows without terms never reach the backend
    active = []
    for c in model.constraints:
        if c.terms:
            active.append(c)
        elif not _holds(0.0, c.sense, c.rhs, 1e-9):
            logger.debug("constraint %s has no terms and cannot hold", c.name)
            return MilpSolution(SolveStatus.INFEASIBLE, solve_time=time.perf_counter() - start)

    backend = make_backend(settings)
    prob, pvars = to_pulp(model, active)
    prob.solve(backend)
    elapsed = time.perf_counter() - start
    status = _SOL_STATUS.get(prob.sol_status) or _LP_STATUS.get(prob.status, SolveStatus.INFEASIBLE)
    logger.debug("solved %s: %s in %.3fs (%d vars, %d rows)",
                 model.name, status.value, elapsed, len(pvars), len(active))
    if not status.has_solution:
        return MilpSolution(status, solve_time=elapsed)

    assignment = {name: _clean_value(model.variables[name], pv.varValue) for name, pv in pvars.items()}
    return MilpSolution(status, assignment, model.objective_value(assignment), elapsed)


# --- Independent checking ---

@dataclass(frozen=True)
class Violation:
    name: str
    kind: str  # constraint, bound or integrality
    amount: float


def check_feasibility(model: MilpModel, assignment: Dict[str, float], tol: float = 1e-6) -> List[Violation]:
    missing = [n for n in model.variables if n not in assignment]
    if missing:
        raise MilpError(f"assignment misses {len(missing)} variables, e.g. {missing[:5]}")
    report = []
    for var in model.variables.values():
        value = assignment[var.name]
        if var.lower is not None and value < var.lower - tol:
            report.append(Violation(var.name, "bound", var.lower - value))
        if var.upper is not None and value > var.upper + tol:
            report.append(Violation(var.name, "bound", value - var.upper))
        if var.is_integer and abs(value - round(value)) > tol:
            report.append(Violation(var.name, "integrality", abs(value - round(value))))
    for c in model.constraints:
        amount = c.violation(assignment)
        if amount > tol:
            report.append(Violation(c.name, "constraint", amount))
    return report


# --- Brute-force oracle ---

def _integer_domain(var: Variable) -> range:
    if var.lower is None or var.upper is None:
        raise MilpError(f"brute force needs finite bounds on integer variable {var.name}")
    return range(math.ceil(var.lower - 1e-9), math.floor(var.upper + 1e-9) + 1)


def _residual_lp(model: MilpModel, fixed: Dict[str, float], continuous: List[Variable]):
    """Exact LP over the continuous variables with the integer ones fixed: (status, values, objective)."""
    index = {v.name: k for k, v in enumerate(continuous)}
    c = np.zeros(len(continuous))
    base = model.objective.constant
    for n, coef in model.objective.terms.items():
        if n in index:
            c[index[n]] += coef
        else:
            base += coef * fixed[n]
    a_ub, b_ub, a_eq, b_eq = [], [], [], []
    for con in model.constraints:
        row = np.zeros(len(continuous))
        rhs = con.rhs
        for n, coef in con.terms:
            if n in index:
                row[index[n]] += coef
            else:
                rhs -= coef * fixed[n]
        if not row.any():
            if not _holds(0.0, con.sense, rhs, 1e-9):
                return SolveStatus.INFEASIBLE, None, math.nan
            continue
        if con.sense == Sense.LE:
            a_ub.append(row)
            b_ub.append(rhs)
        elif con.sense == Sense.GE:
            a_ub.append(-row)
            b_ub.append(-rhs)
        else:
            a_eq.append(row)
            b_eq.append(rhs)
    if not continuous:
        return SolveStatus.OPTIMAL, {}, base
    res = linprog(
        c,
        A_ub=np.array(a_ub) if a_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(a_eq) if a_eq else None,
        b_eq=np.array(b_eq) if b_eq else None,
        bounds=[(v.lower, v.upper) for v in continuous],
        method="highs",
    )
    if res.status == 0:
        return SolveStatus.OPTIMAL, {v.name: float(x) for v, x in zip(continuous, res.x)}, base + float(res.fun)
    if res.status == 3:
        return SolveStatus.UNBOUNDED, None, -math.inf
    return SolveStatus.INFEASIBLE, None, math.nan


def _grid_search(model: MilpModel, fixed: Dict[str, float], continuous: List[Variable], steps: int):
    axes = []
    for v in continuous:
        if v.lower is None or v.upper is None:
            raise MilpError(f"grid search needs finite bounds on {v.name}")
        axes.append(np.linspace(v.lower, v.upper, steps + 1))
    best = (SolveStatus.INFEASIBLE, None, math.nan)
    for point in itertools.product(*axes):
        assignment = {**fixed, **{v.name: float(x) for v, x in zip(continuous, point)}}
        if all(_holds(c.lhs_value(assignment), c.sense, c.rhs, 1e-9) for c in model.constraints):
            value = model.objective_value(assignment)
            if best[1] is None or value < best[2]:
                best = (SolveStatus.OPTIMAL, assignment, value)
    if best[1] is None:
        return best
    return best[0], {v.name: best[1][v.name] for v in continuous}, best[2]


def brute_force_solve(model: MilpModel, grid: Optional[int] = None,
                      max_integer: int = BRUTE_FORCE_MAX_INTEGER) -> MilpSolution:
    """
    Enumerate every integer assignment and solve the continuous remainder.

    With grid=None the remainder is an exact LP; with grid=n each continuous
    variable is sampled at n+1 evenly spaced points (at most four of them).
    Integer variables whose bounds coincide count as constants.
    """
    start = time.perf_counter()
    integers = model.integer_variables
    free = [v for v in integers if v.lower is None or v.upper is None or v.lower != v.upper]
    if len(free) > max_integer:
        raise MilpError(f"too large for brute force: {len(free)} free integer variables (max {max_integer})")
    continuous = model.continuous_variables
    if grid is not None and len(continuous) > BRUTE_FORCE_MAX_CONTINUOUS_GRID:
        raise MilpError(f"grid search supports at most {BRUTE_FORCE_MAX_CONTINUOUS_GRID} continuous variables")
    domains = [_integer_domain(v) for v in integers]
    combos = math.prod(len(d) for d in domains)
    if combos > BRUTE_FORCE_MAX_COMBINATIONS:
        raise MilpError(f"too large for brute force: {combos} integer assignments")

    best: Optional[Tuple[float, Dict[str, float]]] = None
    unbounded = False
    enumerated = 0
    for values in itertools.product(*domains):
        enumerated += 1
        fixed = {v.name: float(x) for v, x in zip(integers, values)}
        if grid is None:
            status, cont, obj = _residual_lp(model, fixed, continuous)
        else:
            status, cont, obj = _grid_search(model, fixed, continuous, grid)
        if status == SolveStatus.UNBOUNDED:
            unbounded = True
            continue
        if status != SolveStatus.OPTIMAL:
            continue
        if best is None or obj < best[0] - 1e-12:
            best = (obj, {**fixed, **cont})

    elapsed = time.perf_counter() - start
    if unbounded:
        return MilpSolution(SolveStatus.UNBOUNDED, objective_value=-math.inf, solve_time=elapsed, enumerated=enumerated)
    if best is None:
        return MilpSolution(SolveStatus.INFEASIBLE, solve_time=elapsed, enumerated=enumerated)
    assignment = {n: best[1][n] for n in model.variables}
    return MilpSolution(SolveStatus.OPTIMAL, assignment, model.objective_value(assignment), elapsed, enumerated)


# --- Model files ---

_FROM_PULP_SENSE = {pulp.LpConstraintLE: Sense.LE, pulp.LpConstraintEQ: Sense.EQ, pulp.LpConstraintGE: Sense.GE}


def write_model(model: MilpModel, path) -> Path:
    """Write the model through pulp: MPS for a .mps suffix, LP text otherwise."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    prob, _ = to_pulp(model, [c for c in model.constraints if c.terms])
    if path.suffix.lower() == ".mps":
        prob.writeMPS(str(path))
    else:
        prob.writeLP(str(path))
    return path


def read_mps(path) -> MilpModel:
    """MilpModel from an MPS file; integer variables bounded to [0, 1] come back as binaries."""
    try:
        _, prob = pulp.LpProblem.fromMPS(str(path))
    except FileNotFoundError as e:
        raise MilpError(f"model file not found: {path}") from e
    except (ValueError, KeyError, IndexError) as e:
        raise MilpError(f"{path}: cannot read MPS model ({e})") from e
    data = prob.toDict()
    model = MilpModel(data["parameters"]["name"])
    for v in data["variables"]:
        lower, upper = v["lowBound"], v["upBound"]
        kind = VarKind.CONTINUOUS
        if v["cat"] == pulp.LpInteger:
            kind = VarKind.BINARY if (lower, upper) == (0, 1) else VarKind.INTEGER
        model.add_variable(v["name"], kind, lower, upper)
    for c in data["constraints"]:
        terms = LinExpr({t["name"]: t["value"] for t in c["coefficients"]})
        model.add_constraint(c["name"], terms, _FROM_PULP_SENSE[c["sense"]], -c["constant"])
    objective = {t["name"]: t["value"] for t in data["objective"]["coefficients"]}
    model.set_objective(LinExpr(objective, prob.objective.constant))
    return model
