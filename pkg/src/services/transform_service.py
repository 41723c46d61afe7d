"""
文法轉換服務
Linear-cycle removal that keeps the string distribution, least fixed points for
P(empty string) and termination probabilities, and Monte-Carlo consistency checks
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.models.derivation import ConsistencyReport, CycleReport
from src.models.errors import ConvergenceError, GrammarValidationError, NullRuleError
from src.models.grammar import Pcfg, Rule
from src.services.config_service import EngineConfig
from src.services.grammar_service import format_cycle, linear_cycles

logger = logging.getLogger(__name__)

# a self-loop at least this likely is treated as the nonterminal's only rule
SELF_LOOP_ONLY = 1.0 - 1e-12

# Newton corrections applied after the monotone iteration has converged
NEWTON_POLISH_STEPS = 3


class TransformService:
    """文法轉換服務"""

    def __init__(self, config=EngineConfig):
        self.config = config

    # ------------------------------------------------------------------
    # linear cycles

    def find_linear_cycles(self, g: Pcfg) -> CycleReport:
        return CycleReport(cycles=linear_cycles(g))

    def is_self_loop_only(self, g: Pcfg, name: str) -> bool:
        """A -> A is the nonterminal's only rule with positive probability"""
        rules = [rule for rule in g.rules_for(name) if rule.probability > 0]
        loops = [rule for rule in rules if rule.is_unit and rule.rhs[0].name == name]
        return bool(loops) and (len(rules) == len(loops) or loops[0].probability >= SELF_LOOP_ONLY)

    def eliminate_cycle(self, g: Pcfg, cycle: Sequence[str]) -> Pcfg:
        """
        One cycle-removal step

        Length 1: drop A -> A [p] and divide A's other rules by 1 - p.
        Length m > 1: drop Am -> A1 [pm] and give Am every rule A1 -> alpha [c]
        as Am -> alpha [pm * c], adding to an existing Am -> alpha.
        """
        if len(cycle) == 1:
            return self._drop_self_loop(g, cycle[0])
        return self._bypass_edge(g, cycle[-1], cycle[0])

    def _drop_self_loop(self, g: Pcfg, name: str) -> Pcfg:
        if self.is_self_loop_only(g, name):
            return g
        loop = next(rule for rule in g.rules_for(name) if rule.is_unit and rule.rhs[0].name == name)
        scale = 1.0 / (1.0 - loop.probability)
        rules = []
        for rule in g.rules:
            if rule is loop:
                continue
            if rule.lhs == name:
                rule = rule.model_copy(update={'probability': rule.probability * scale})
            rules.append(rule)
        return g.with_rules(rules)

    def _bypass_edge(self, g: Pcfg, source: str, target: str) -> Pcfg:
        edge = next(
            rule for rule in g.rules_for(source)
            if rule.is_unit and rule.rhs[0].name == target and rule.probability > 0
        )
        p_m = edge.probability
        additions: Dict[Tuple, float] = {}
        for rule in g.rules_for(target):
            additions[rule.rhs] = additions.get(rule.rhs, 0.0) + p_m * rule.probability

        rules: List[Rule] = []
        last_source = None
        for rule in g.rules:
            if rule is edge:
                continue
            if rule.lhs == source and rule.rhs in additions:
                rule = rule.model_copy(update={'probability': rule.probability + additions.pop(rule.rhs)})
            rules.append(rule)
            if rule.lhs == source:
                last_source = len(rules)
        if last_source is None:
            last_source = len(rules)
        extra = [Rule(lhs=source, rhs=rhs, probability=p) for rhs, p in additions.items()]
        rules[last_source:last_source] = extra
        return g.with_rules(rules)

    def remove_linear_cycles(self, g: Pcfg) -> Pcfg:
        """
        Remove every linear cycle, self-loops first, then longest cycle first

        Nonterminals whose only rule is A -> A stay as they are.

        Raises:
            NullRuleError: g has a null rule
            ConvergenceError: more than MAX_CYCLE_STEPS steps
        """
        if g.has_null_rules():
            raise NullRuleError('linear-cycle removal requires a grammar without null rules')

        for step in range(self.config.MAX_CYCLE_STEPS):
            cycles = [
                cycle for cycle in linear_cycles(g)
                if not (len(cycle) == 1 and self.is_self_loop_only(g, cycle[0]))
            ]
            if not cycles:
                if step:
                    logger.debug('linear cycles removed in %d steps', step)
                return g
            loops = [cycle for cycle in cycles if len(cycle) == 1]
            cycle = loops[0] if loops else cycles[0]
            logger.debug('step %d: eliminating %s', step + 1, format_cycle(cycle))
            g = self.eliminate_cycle(g, cycle)

        raise ConvergenceError(
            f'linear cycles remain after {self.config.MAX_CYCLE_STEPS} removal steps',
            detail=g,
        )

    # ------------------------------------------------------------------
    # least fixed points

    def least_fixed_point(
        self,
        g: Pcfg,
        terminal_factor: float,
        tol: float,
        strict: bool = True,
        history: Optional[List[Dict[str, float]]] = None,
    ) -> Dict[str, float]:
        """
        Least non-negative solution of t_A = sum P(rule) * prod(t_B over rhs)

        Iterates monotonically from t = 0 until the max-norm change is below tol,
        then takes up to NEWTON_POLISH_STEPS Newton steps on t - F(t) = 0 while the
        residual keeps shrinking. Near a fixed point of 1 the monotone iteration
        stalls a few ulps short; the Newton steps close that gap.
        Terminals contribute `terminal_factor` (0 for P(empty), 1 for termination).

        Raises:
            ConvergenceError: no convergence within MAX_FIXED_POINT_ITERATIONS (strict only)
        """
        if tol <= 0:
            raise ValueError('tol must be positive')
        names = list(g.nonterminals)
        index = {name: i for i, name in enumerate(names)}
        compiled = []
        for rule in g.rules:
            weight = rule.probability
            children = []
            for symbol in rule.rhs:
                if symbol.is_terminal:
                    weight *= terminal_factor
                elif symbol.name in index:
                    children.append(index[symbol.name])
                else:
                    weight = 0.0
            if weight > 0:
                compiled.append((index[rule.lhs], weight, children))

        t = [0.0] * len(names)
        for iteration in range(1, self.config.MAX_FIXED_POINT_ITERATIONS + 1):
            parts: List[List[float]] = [[] for _ in names]
            for lhs, weight, children in compiled:
                value = weight
                for child in children:
                    value *= t[child]
                parts[lhs].append(value)
            updated = [min(1.0, math.fsum(values)) for values in parts]
            change = max((abs(a - b) for a, b in zip(updated, t)), default=0.0)
            t = updated
            if history is not None:
                history.append(dict(zip(names, t)))
            if change < tol:
                logger.debug('fixed point reached after %d iterations', iteration)
                return dict(zip(names, _newton_polish(compiled, t)))

        last = dict(zip(names, t))
        if strict:
            raise ConvergenceError(
                f'fixed-point iteration did not converge in {self.config.MAX_FIXED_POINT_ITERATIONS} iterations',
                detail=last,
            )
        logger.warning('fixed-point iteration stopped before convergence; returning last iterate')
        return last

    def p_epsilon(self, g: Pcfg, a: str, tol: float = 1e-12) -> float:
        """Probability that nonterminal `a` derives the empty string"""
        if a not in g.nonterminals:
            raise GrammarValidationError(f'unknown nonterminal {a}')
        return self.least_fixed_point(g, terminal_factor=0.0, tol=tol)[a]

    def termination_probabilities(self, g: Pcfg, tol: float = 1e-13, strict: bool = True) -> Dict[str, float]:
        """Per-nonterminal probability that a derivation terminates"""
        return self.least_fixed_point(g, terminal_factor=1.0, tol=tol, strict=strict)

    # ------------------------------------------------------------------
    # Monte Carlo

    def consistency_estimate(self, g: Pcfg, samples: int, max_steps: int, seed: int) -> ConsistencyReport:
        """
        Termination rate within max_steps rule applications, plus the fixed-point value

        Derivations are simulated generation by generation for a whole chunk
        of samples at once; the rule count of a run is its tree size.
        """
        if samples < 1 or max_steps < 1:
            raise ValueError('samples and max_steps must be at least 1')

        names = list(g.nonterminals)
        index = {name: i for i, name in enumerate(names)}
        tables = []
        for name in names:
            rules = g.rules_for(name)
            probs = np.array([rule.probability for rule in rules], dtype=float)
            offspring = np.zeros((len(rules), len(names)), dtype=np.int64)
            for r, rule in enumerate(rules):
                for symbol in rule.rhs:
                    if not symbol.is_terminal:
                        offspring[r, index[symbol.name]] += 1
            tables.append((probs / probs.sum() if probs.size else probs, offspring))

        rng = np.random.default_rng(seed)
        terminated = 0
        start = index[g.start]
        chunk = self.config.CONSISTENCY_CHUNK
        for offset in range(0, samples, chunk):
            size = min(chunk, samples - offset)
            pending = np.zeros((size, len(names)), dtype=np.int64)
            pending[:, start] = 1
            applied = np.zeros(size, dtype=np.int64)
            while len(pending):
                total = pending.sum(axis=1)
                done = total == 0
                terminated += int(done.sum())
                alive = ~done & (applied + total <= max_steps)
                pending, applied, total = pending[alive], applied[alive], total[alive]
                if not len(pending):
                    break
                produced = np.zeros_like(pending)
                for a, (probs, offspring) in enumerate(tables):
                    counts = pending[:, a]
                    if not counts.any():
                        continue
                    if not probs.size:
                        raise GrammarValidationError(f'nonterminal {names[a]} has no rules')
                    chosen = rng.multinomial(counts, probs)
                    produced += chosen @ offspring
                applied = applied + total
                pending = produced

        monte_carlo = terminated / samples
        fixed_point = self.termination_probabilities(g, strict=False)[g.start]
        # an all-or-nothing sample has zero variance
        variance = max(monte_carlo * (1.0 - monte_carlo), fixed_point * (1.0 - fixed_point))
        halfwidth = 1.96 * math.sqrt(variance / samples)
        return ConsistencyReport(
            fixed_point=fixed_point,
            monte_carlo=monte_carlo,
            halfwidth=halfwidth,
            samples=samples,
            max_steps=max_steps,
            seed=seed,
        )


def _image(compiled, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """F(x) and its Jacobian for compiled (lhs, weight, children) rules"""
    size = len(x)
    values = np.zeros(size)
    jacobian = np.zeros((size, size))
    for lhs, weight, children in compiled:
        values[lhs] += weight * math.prod(x[child] for child in children)
        for position, child in enumerate(children):
            jacobian[lhs, child] += weight * math.prod(
                x[other] for k, other in enumerate(children) if k != position
            )
    return values, jacobian


def _newton_polish(compiled, t: List[float]) -> List[float]:
    x = np.array(t, dtype=float)
    if not x.size:
        return t
    values, jacobian = _image(compiled, x)
    residual = float(np.max(np.abs(values - x)))
    for _ in range(NEWTON_POLISH_STEPS):
        if residual == 0.0:
            break
        try:
            step = np.linalg.solve(np.eye(len(x)) - jacobian, values - x)
        except np.linalg.LinAlgError:
            break
        candidate = np.clip(x + step, 0.0, 1.0)
        candidate_values, candidate_jacobian = _image(compiled, candidate)
        candidate_residual = float(np.max(np.abs(candidate_values - candidate)))
        if not candidate_residual <= residual:
            break
        x, values, jacobian, residual = candidate, candidate_values, candidate_jacobian, candidate_residual
    return x.tolist()
