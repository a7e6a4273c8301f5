"""
The discrete-time BSDE satisfied by a recursive evaluation on a grid model.

Along every step the increment of the evaluation is decomposed as

    Pi_{t+1} - Pi_t = -g_t h + Z^f_t dW^f + Z_t dW + Ztilde_t dNtilde + dL,

where the integrands are the coefficients of the projection of the increment on the centred
increment coordinates under the risk-neutral measure, `g_t` collects the predictable part, and
`dL` is the residual, orthogonal to every coordinate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from scipy.special import logsumexp
from sympy import Matrix, Rational

from mceval import numerics
from mceval.evaluate.dynamic import DynamicEvaluation, backward_evaluate
from mceval.evaluate.principles import PrincipleSpec
from mceval.model.measures import one_step_pricing, stock_groups
from mceval.model.partitions import ObservableSpec, partition_for
from mceval.model.tree import ScenarioTree
from mceval.model.values import ConditionalValue, Payoff
from mceval.numerics import Number
from mceval.reports import EXACT_MODE, FLOAT_MODE, CheckResult, Report, failure

from .errors import InvalidParam, NotPureInsurance, SingularProjection
from .grid import GridModel

logger = logging.getLogger(__name__)


@dataclass
class BsdeSolution:
    """
    The solution of the discrete BSDE of a recursive evaluation.

    Attributes:
        model: the grid model.
        spec: the per-step principle.
        dynamic: the recursive evaluation, `Y`.
        Zf: the integrands against the financial Brownian motions, per non-leaf node.
        Z: the integrands against the insurance Brownian motions, per non-leaf node.
        Ztilde: the integrands against the compensated jumps, per non-leaf node and mark.
        L_increments: the residual increment of the step ending at each non-root node.
        driver: the realized driver value `g` per non-leaf node.
        risk_neutral: the one-step risk-neutral probability of each non-root node given its
            parent.
    """

    model: GridModel
    spec: PrincipleSpec
    dynamic: DynamicEvaluation
    Zf: dict[str, tuple] = field(default_factory=dict)
    Z: dict[str, tuple] = field(default_factory=dict)
    Ztilde: dict[str, dict] = field(default_factory=dict)
    L_increments: dict[str, Number] = field(default_factory=dict)
    driver: dict[str, Number] = field(default_factory=dict)
    risk_neutral: dict[str, Number] = field(default_factory=dict)

    @property
    def tree(self) -> ScenarioTree:
        return self.dynamic.tree

    @property
    def Y(self) -> tuple[ConditionalValue, ...]:
        return self.dynamic.values

    def y(self, node_id: str) -> Number:
        return self.dynamic.node_values[node_id]

    def integrands(self, node_id: str) -> list[Number]:
        return list(self.Zf[node_id]) + list(self.Z[node_id]) + list(self.Ztilde[node_id].values())

    def reconstruction_check(self) -> Report:
        """
        Check `Y_child = Y - g h + Z^f dW^f + Z dW + Ztilde dNtilde + dL` at every node.
        """
        model, tree = self.model, self.tree
        report = Report(title="reconstruction")
        count, mode = 0, EXACT_MODE
        for t in tree.times[:-1]:
            for node in tree.nodes_at(t):
                for child in tree.children(node.id):
                    count += 1
                    inc = model.increment(child.id)
                    jumps = [numerics.sub(n, numerics.mul(nu, model.h)) for n, (_, nu) in zip(inc.dN, model.marks)]
                    martingale = numerics.dot(self.integrands(node.id), list(inc.dWf) + list(inc.dW) + jumps)
                    rebuilt = numerics.add(
                        self.y(node.id),
                        -numerics.mul(self.driver[node.id], model.h),
                        martingale,
                        self.L_increments[child.id],
                    )
                    if not numerics.is_exact(rebuilt):
                        mode = FLOAT_MODE
                    if not numerics.close(rebuilt, self.y(child.id)):
                        witness = {"node": child.id, "Y": self.y(child.id), "rebuilt": rebuilt}
                        report.add(failure("reconstruction", witness, count, mode=mode))
                        return report
        report.add(CheckResult("reconstruction", "pass-exhaustive", count, mode=mode))
        return report

    def orthogonality_check(self) -> Report:
        """
        Check `E_Q[dL] = 0` and `E_Q[dL X_k] = 0` for every centred increment coordinate `X_k`
        at every node.
        """
        model, tree = self.model, self.tree
        report = Report(title="orthogonality")
        count, mode = 0, EXACT_MODE
        for t in tree.times[:-1]:
            for node in tree.nodes_at(t):
                count += 1
                children = tree.children(node.id)
                q = [self.risk_neutral[c.id] for c in children]
                dL = [self.L_increments[c.id] for c in children]
                X = [model.projection_vector(c.id) for c in children]
                moments = [numerics.dot(q, dL)]
                moments += [numerics.dot(q, [numerics.mul(l, x[k]) for l, x in zip(dL, X)]) for k in range(len(X[0]))]
                if not all(numerics.is_exact(m) for m in moments):
                    mode = FLOAT_MODE
                if not all(numerics.close(m, 0) for m in moments):
                    report.add(failure("orthogonality", {"node": node.id, "moments": moments}, count, mode=mode))
                    return report
        report.add(CheckResult("orthogonality", "pass-exhaustive", count, mode=mode))
        return report

    def to_frame(self) -> pd.DataFrame:
        """
        One row per node: `time`, `node_id`, `Y`, the residual `L` of the step ending there,
        and the integrands and driver value of the step leaving it.
        """
        rows = []
        for t in self.tree.times:
            for node in self.tree.nodes_at(t):
                leaf = node.id not in self.Zf
                rows.append(
                    {
                        "time": t,
                        "node_id": node.id,
                        "Y": numerics.to_text(self.y(node.id)),
                        "L": numerics.to_text(self.L_increments[node.id]) if node.id in self.L_increments else "",
                        "Zf": "" if leaf else ";".join(map(numerics.to_text, self.Zf[node.id])),
                        "Z": "" if leaf else ";".join(map(numerics.to_text, self.Z[node.id])),
                        "Ztilde": "" if leaf else ";".join(f"{numerics.to_text(x)}:{numerics.to_text(v)}" for x, v in self.Ztilde[node.id].items()),
                        "driver": "" if leaf else numerics.to_text(self.driver[node.id]),
                    }
                )
        return pd.DataFrame(rows)

    def to_csv(self, path: str | Path):
        self.to_frame().to_csv(path, index=False)
        logger.info("Wrote BSDE solution to %s", path)


def _solve(C: list[list[Number]], b: list[Number], where: str) -> list[Number]:
    exact = all(numerics.is_exact(v) for row in C for v in row) and all(numerics.is_exact(v) for v in b)
    if exact:
        M = Matrix(C)
        if M.det() == 0:
            raise SingularProjection(f"Increment covariance at node '{where}' is singular.")
        return [Rational(v) for v in M.LUsolve(Matrix(b))]
    A = np.array(C, dtype=float)
    if np.linalg.matrix_rank(A) < len(b):
        raise SingularProjection(f"Increment covariance at node '{where}' is singular.")
    return [float(v) for v in np.linalg.solve(A, np.array(b, dtype=float))]


def solve_discrete(per_step: PrincipleSpec | str, H: Mapping[str, Number], model: GridModel, tree: ScenarioTree | None = None) -> BsdeSolution:
    """
    Solve the discrete BSDE of the recursive evaluation of `H` with the per-step principle
    `per_step` on the grid model.

    The evaluation is computed by `backward_evaluate`. At every node, the increment of the
    evaluation is projected under the risk-neutral measure on the centred coordinates
    `(dW^f + theta h, dW, dN - nu h)`; the coefficients are the integrands, and the
    remainder is the residual `dL`.

    Args:
        per_step: the per-step principle.
        H: the payoff at the horizon.
        model: the grid model.
        tree: the tree encoding `model`; `model.tree` by default.

    Returns:
        BsdeSolution: the solution. Its `reconstruction_check` and `orthogonality_check`
            hold exactly in rational mode.

    Raises:
        SingularProjection: if the increment covariance at a node is singular.
    """
    if isinstance(per_step, str):
        per_step = PrincipleSpec.parse(per_step)
    tree = tree or model.tree
    dynamic = backward_evaluate(per_step, H, tree)
    solution = BsdeSolution(model, per_step, dynamic)
    theta = model.theta()
    n, d = model.n_financial, model.n_insurance
    for t in tree.times[:-1]:
        for node in tree.nodes_at(t):
            weights = one_step_pricing(tree, node.id)
            children = tree.children(node.id)
            for stock, members in stock_groups(tree, node.id).items():
                mass = numerics.add(*(tree.prob(m) for m in members))
                for m in members:
                    solution.risk_neutral[m] = numerics.mul(weights[stock], numerics.div(tree.prob(m), mass))
            q = [solution.risk_neutral[c.id] for c in children]
            y = solution.y(node.id)
            delta = [numerics.sub(solution.y(c.id), y) for c in children]
            X = [model.projection_vector(c.id) for c in children]
            k = len(X[0])
            mean = numerics.dot(q, delta)
            centre = [numerics.dot(q, [x[j] for x in X]) for j in range(k)]
            Xc = [[numerics.sub(x[j], centre[j]) for j in range(k)] for x in X]
            C = [[numerics.dot(q, [numerics.mul(x[i], x[j]) for x in Xc]) for j in range(k)] for i in range(k)]
            b = [numerics.dot(q, [numerics.mul(numerics.sub(v, mean), x[i]) for v, x in zip(delta, Xc)]) for i in range(k)]
            beta = _solve(C, b, node.id)
            solution.Zf[node.id] = tuple(beta[:n])
            solution.Z[node.id] = tuple(beta[n : n + d])
            solution.Ztilde[node.id] = {x: v for (x, _), v in zip(model.marks, beta[n + d :])}
            for c, v, x in zip(children, delta, Xc):
                solution.L_increments[c.id] = numerics.sub(numerics.sub(v, mean), numerics.dot(beta, x))
            drift = numerics.add(mean, numerics.mul(numerics.dot(theta, beta[:n]), model.h))
            solution.driver[node.id] = numerics.div(-drift, model.h)
    logger.info("Solved discrete BSDE on %d nodes", len(solution.Zf))
    return solution


def drift_identity_check(sol: BsdeSolution, model: GridModel, alpha) -> Report:
    """
    Check the drift of a Mean-Variance recursion at every node:

        E[dPi] = theta Z^f h - alpha/2 (|Z|^2 h + sum_x Ztilde(x)^2 nu(x) (1 - nu(x) h) h)
                 - alpha/2 E_Q[(dL - E[dL | F^S])^2] + E[dL],

    where `E` is the physical conditional expectation given the node and `E[. | F^S]` is
    taken within the children sharing a stock value.

    Sign and variance conventions: the `theta Z^f h` term enters with a plus sign, matching the
    driver `g = theta z^f + ...` and the financial coordinate `dW^f + theta h`, which is centred
    under the pricing measure. Statements of this identity that write `- theta Z^f h` use the
    opposite sign for `theta`. The jump term uses the one-step variance `nu h (1 - nu h)` of
    the discrete jump indicator, not its continuous-time limit `nu h`.

    Raises:
        InvalidParam: if the solution was not produced with a Mean-Variance or Expectation
            principle.
    """
    if sol.spec.kind not in ("MeanVariance", "Expectation"):
        raise InvalidParam(f"The drift identity holds for Mean-Variance recursions, not '{sol.spec.kind}'.")
    alpha = numerics.coerce(alpha)
    tree, h = sol.tree, model.h
    half_alpha = numerics.div(alpha, 2)
    theta = model.theta()
    report = Report(title="drift identity")
    count, mode = 0, EXACT_MODE
    for t in tree.times[:-1]:
        for node in tree.nodes_at(t):
            count += 1
            children = tree.children(node.id)
            p = [numerics.div(tree.prob(c.id), tree.prob(node.id)) for c in children]
            dL = {c.id: sol.L_increments[c.id] for c in children}
            lhs = numerics.dot(p, [numerics.sub(sol.y(c.id), sol.y(node.id)) for c in children])
            residual_variance = 0
            for members in stock_groups(tree, node.id).values():
                mass = numerics.add(*(tree.prob(m) for m in members))
                local_mean = numerics.div(numerics.dot([tree.prob(m) for m in members], [dL[m] for m in members]), mass)
                residual_variance = numerics.add(
                    residual_variance,
                    numerics.dot(
                        [sol.risk_neutral[m] for m in members],
                        [numerics.power(numerics.sub(dL[m], local_mean), 2) for m in members],
                    ),
                )
            quadratic = numerics.add(0, *(numerics.power(z, 2) for z in sol.Z[node.id]))
            jumps = [
                numerics.mul(numerics.power(sol.Ztilde[node.id][x], 2), nu, numerics.sub(1, numerics.mul(nu, h)))
                for x, nu in model.marks
            ]
            quadratic = numerics.mul(numerics.add(quadratic, *jumps), h)
            rhs = numerics.add(
                numerics.mul(numerics.dot(theta, sol.Zf[node.id]), h),
                -numerics.mul(half_alpha, quadratic),
                -numerics.mul(half_alpha, residual_variance),
                numerics.dot(p, [dL[c.id] for c in children]),
            )
            if not (numerics.is_exact(lhs) and numerics.is_exact(rhs)):
                mode = FLOAT_MODE
            if not numerics.close(lhs, rhs):
                report.add(failure("drift_identity", {"node": node.id, "lhs": lhs, "rhs": rhs}, count, mode=mode))
                return report
    report.add(CheckResult("drift_identity", "pass-exhaustive", count, mode=mode))
    return report


def exp_tower_check(gamma, H: Mapping[str, Number], model: GridModel | None = None, tree: ScenarioTree | None = None, tol: float = 1e-9) -> Report:
    """
    Check that the recursive exponential evaluation of a pure insurance payoff equals the
    one-shot value `gamma log E[exp(H / gamma)]`.

    Raises:
        NotPureInsurance: if `H` depends on the stock, that is, it is not measurable with
            respect to the insurance increments (of `model`) or the insurance path (of `tree`).
    """
    if model is None and tree is None:
        raise InvalidParam("A grid model or a tree is required.")
    tree = tree or model.tree
    H = Payoff(H)
    insurance = model.insurance_partition() if model is not None else partition_for(tree, ObservableSpec("Y", tree.horizon))
    if not H.is_measurable(insurance):
        raise NotPureInsurance("The payoff depends on the stock; the exponential tower check does not apply.")
    gamma = numerics.coerce(gamma)
    recursive = backward_evaluate(PrincipleSpec.exponential(gamma), H, tree).initial
    leaves = tree.leaves
    g = float(gamma)
    one_shot = g * float(logsumexp([float(H[l]) / g for l in leaves], b=[float(tree.leaf_prob[l]) for l in leaves]))
    report = Report(title="exponential tower")
    note = f"recursive {numerics.to_text(recursive)}, one-shot {one_shot!r}"
    if abs(float(recursive) - one_shot) <= tol * max(1.0, abs(one_shot)):
        report.add(CheckResult("exp_tower", "pass-exhaustive", 1, mode=FLOAT_MODE, note=note))
    else:
        report.add(failure("exp_tower", {"H": H.to_record(), "recursive": recursive, "one_shot": one_shot}, 1, mode=FLOAT_MODE))
    return report


@dataclass
class TrendReport:
    """
    The initial value of a recursive evaluation across step sizes. No limit is asserted.
    """

    hs: tuple
    values: tuple
    spec: PrincipleSpec

    @property
    def direction(self) -> str:
        diffs = [float(b) - float(a) for a, b in zip(self.values, self.values[1:])]
        if all(math.isclose(d, 0.0, abs_tol=1e-12) for d in diffs):
            return "constant"
        if all(d >= -1e-12 for d in diffs):
            return "increasing"
        if all(d <= 1e-12 for d in diffs):
            return "decreasing"
        return "none"

    @property
    def monotone(self) -> bool:
        return self.direction != "none"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"h": [numerics.to_text(h) for h in self.hs], "Y0": [numerics.to_text(v) for v in self.values]})

    def summary(self) -> str:
        lines = [f"{numerics.to_text(h)}\t{numerics.to_text(v)}" for h, v in zip(self.hs, self.values)]
        return "\n".join([f"Y0 of '{self.spec}' by step size"] + lines + [f"trend: {self.direction}"])

    def plot(self):
        plt.plot([float(h) for h in self.hs], [float(v) for v in self.values], "o-")
        plt.xscale("log")
        plt.xlabel("h")
        plt.ylabel("Y0")
        plt.grid()
        plt.show()


def trend_report(
    per_step: PrincipleSpec | str,
    payoff_fn: Callable[[GridModel], Mapping[str, Number]],
    model_factory: Callable[[Number], GridModel],
    hs: Sequence = (Rational(1, 4), Rational(1, 8), Rational(1, 16)),
) -> TrendReport:
    """
    Evaluate the payoff built by `payoff_fn` on the model built by `model_factory` for every
    step size in `hs`, and report the initial values.
    """
    if isinstance(per_step, str):
        per_step = PrincipleSpec.parse(per_step)
    values = []
    for h in hs:
        model = model_factory(h)
        values.append(backward_evaluate(per_step, payoff_fn(model), model.tree).initial)
        logger.info("Step size %s: Y0 = %s", numerics.to_text(model.h), numerics.to_text(values[-1]))
    return TrendReport(tuple(numerics.coerce(h) for h in hs), tuple(values), per_step)
