"""
Standing conjunctive graph queries, evaluated at the end host.

A GraphQuery is a list of QueryPatterns whose slots are fixed UUIDs,
variables (`?name`) or wildcards (`*`). `compile_query` erases variables to
get the routable alpha patterns (patterns that erase to the same TuplePattern
share one alpha node) and orders the patterns into a connected left-deep join
chain. `on_tuple` then performs the right/left activations: a new tuple joins
against the tokens one level up and every new token is pushed down the chain
against the alpha memories below. Results only ever grow.
"""

import logging
import uuid
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from pydantic import BaseModel, ConfigDict, field_validator

from gin.errors import DisconnectedQuery, NoResponders, QueryParseError, UnroutablePattern
from gin.tuples import Tuple7, TuplePattern, tuple_id

logger = logging.getLogger(__name__)


class Var(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


Term = Union[uuid.UUID, Var, None]


class QueryPattern(BaseModel):
    model_config = ConfigDict(frozen=True)

    slots: Tuple[Term, Term, Term, Term]

    @property
    def variables(self) -> List[str]:
        names = []
        for term in self.slots:
            if isinstance(term, Var) and term.name not in names:
                names.append(term.name)
        return names

    @property
    def fixed_count(self) -> int:
        return sum(1 for term in self.slots if isinstance(term, uuid.UUID))

    def erase(self) -> TuplePattern:
        return TuplePattern(slots=tuple(term if isinstance(term, uuid.UUID) else None for term in self.slots))

    def __str__(self) -> str:
        return " ".join("*" if term is None else str(term) for term in self.slots)


class GraphQuery(BaseModel):
    model_config = ConfigDict(frozen=True)

    patterns: Tuple[QueryPattern, ...]
    projected: Optional[Tuple[str, ...]] = None

    @field_validator("patterns")
    @classmethod
    def _not_empty(cls, value):
        if not value:
            raise ValueError("a query needs at least one pattern")
        return value

    @property
    def variables(self) -> List[str]:
        names = []
        for pattern in self.patterns:
            for name in pattern.variables:
                if name not in names:
                    names.append(name)
        return names


def parse_term(text: str) -> Term:
    if text == "*":
        return None
    if text.startswith("?"):
        if len(text) == 1:
            raise ValueError("empty variable name")
        return Var(name=text[1:])
    return uuid.UUID(text)


def parse_query_text(text: str, projected: Optional[Sequence[str]] = None) -> GraphQuery:
    """One pattern per line, four terms each; `#` starts a comment line"""
    patterns = []
    for number, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        terms = line.split()
        if len(terms) != 4:
            raise QueryParseError(f"expected 4 terms, got {len(terms)}", number)
        try:
            patterns.append(QueryPattern(slots=tuple(parse_term(term) for term in terms)))
        except ValueError as e:
            raise QueryParseError(str(e), number) from e
    if not patterns:
        raise QueryParseError("query has no patterns")
    names = tuple(name.lstrip("?") for name in projected) if projected else None
    return GraphQuery(patterns=tuple(patterns), projected=names)


def match_query_pattern(qp: QueryPattern, t: Tuple7, binding: Dict[str, uuid.UUID]) -> Optional[Dict[str, uuid.UUID]]:
    """Extend binding so that qp matches t, or None"""
    extended = binding
    for term, value in zip(qp.slots, t.slots):
        if term is None:
            continue
        if isinstance(term, Var):
            bound = extended.get(term.name)
            if bound is None:
                if extended is binding:
                    extended = dict(binding)
                extended[term.name] = value
            elif bound != value:
                return None
        elif term != value:
            return None
    return dict(extended) if extended is binding else extended


class Binding(BaseModel):
    """Variable assignment plus the witness tuple ids, one per pattern (query order)"""

    model_config = ConfigDict(frozen=True)

    values: Tuple[Tuple[str, uuid.UUID], ...]
    witnesses: Tuple[bytes, ...]

    def as_dict(self) -> Dict[str, uuid.UUID]:
        return dict(self.values)

    def get(self, name: str) -> Optional[uuid.UUID]:
        return self.as_dict().get(name)

    def format(self) -> str:
        return "  ".join(f"?{name}={value}" for name, value in self.values)


class Token(BaseModel):
    model_config = ConfigDict(frozen=True)

    binding: Tuple[Tuple[str, uuid.UUID], ...]
    tuples: Tuple[Tuple7, ...]

    @property
    def key(self) -> Tuple[bytes, ...]:
        return tuple(tuple_id(t) for t in self.tuples)


class AlphaNode:
    def __init__(self, pattern: TuplePattern):
        self.pattern = pattern
        self.memory: Dict[bytes, Tuple7] = {}
        # chain levels fed by this node
        self.levels: List[int] = []


class BetaStep(BaseModel):
    level: int
    query_index: int
    shared: Tuple[str, ...]


class QueryPlan:
    """Compiled alpha/beta network for one standing query"""

    def __init__(self, query: GraphQuery, order: List[int], alpha_nodes: List[AlphaNode], alpha_of_level: List[int]):
        self.query = query
        self.order = order
        self.alpha_nodes = alpha_nodes
        self.alpha_of_level = alpha_of_level
        self.patterns = [query.patterns[i] for i in order]
        self.beta_chain: List[BetaStep] = []
        bound: Set[str] = set(self.patterns[0].variables)
        for level in range(1, len(self.patterns)):
            names = self.patterns[level].variables
            shared = tuple(name for name in names if name in bound)
            self.beta_chain.append(BetaStep(level=level, query_index=order[level], shared=shared))
            bound.update(names)
        self.beta_memories: List[Dict[Tuple[bytes, ...], Token]] = [{} for _ in self.patterns]
        self._results: Dict[tuple, Binding] = {}
        self.complete: Dict[Tuple[bytes, ...], Token] = self.beta_memories[-1]
        self.partial = False
        self.failed_alphas: List[int] = []
        self.seeded = False

    @property
    def projected(self) -> List[str]:
        if self.query.projected:
            return list(self.query.projected)
        return self.query.variables

    def _result_key(self, token: Token) -> Tuple[Binding, tuple]:
        values = dict(token.binding)
        projected = tuple((name, values[name]) for name in self.projected if name in values)
        # witnesses reported in query order, not chain order
        witnesses = [b""] * len(self.order)
        for level, t in enumerate(token.tuples):
            witnesses[self.order[level]] = tuple_id(t)
        binding = Binding(values=projected, witnesses=tuple(witnesses))
        if self.query.projected:
            return binding, projected
        return binding, (projected, tuple(sorted(witnesses)))

    def results(self) -> Set[Binding]:
        return set(self._results.values())

    def local_graph(self) -> Set[Tuple7]:
        graph: Set[Tuple7] = set()
        for token in self.complete.values():
            graph.update(token.tuples)
        return graph

    def alpha_for(self, pattern: TuplePattern) -> Optional[AlphaNode]:
        for node in self.alpha_nodes:
            if node.pattern == pattern:
                return node
        return None

    # --- activations ----------------------------------------------------------

    def on_tuple(self, alpha: AlphaNode, t: Tuple7) -> List[Binding]:
        """Newly completed (projected) bindings caused by t, in derivation order"""
        tid = tuple_id(t)
        if tid in alpha.memory:
            return []
        alpha.memory[tid] = t
        completed: List[Binding] = []
        for level in alpha.levels:
            pattern = self.patterns[level]
            if level == 0:
                extended = match_query_pattern(pattern, t, {})
                if extended is not None:
                    self._add_token(0, Token(binding=tuple(sorted(extended.items())), tuples=(t,)), completed)
                continue
            for parent in list(self.beta_memories[level - 1].values()):
                extended = match_query_pattern(pattern, t, dict(parent.binding))
                if extended is not None:
                    token = Token(binding=tuple(sorted(extended.items())), tuples=parent.tuples + (t,))
                    self._add_token(level, token, completed)
        return completed

    def _add_token(self, level: int, token: Token, completed: List[Binding]) -> None:
        memory = self.beta_memories[level]
        key = token.key
        if key in memory:
            return
        memory[key] = token
        if level == len(self.patterns) - 1:
            binding, result_key = self._result_key(token)
            if result_key not in self._results:
                self._results[result_key] = binding
                completed.append(binding)
            return
        below = level + 1
        pattern = self.patterns[below]
        alpha = self.alpha_nodes[self.alpha_of_level[below]]
        for t in list(alpha.memory.values()):
            extended = match_query_pattern(pattern, t, dict(token.binding))
            if extended is not None:
                child = Token(binding=tuple(sorted(extended.items())), tuples=token.tuples + (t,))
                self._add_token(below, child, completed)


def compile_query(q: GraphQuery, routable: bool = True) -> QueryPlan:
    patterns = list(q.patterns)
    remaining = list(range(len(patterns)))
    # first: most fixed slots, then original position
    first = min(remaining, key=lambda i: (-patterns[i].fixed_count, i))
    order = [first]
    remaining.remove(first)
    bound_at: Dict[str, int] = {name: 0 for name in patterns[first].variables}
    while remaining:
        candidates = []
        for i in remaining:
            shared = [bound_at[name] for name in patterns[i].variables if name in bound_at]
            if shared:
                candidates.append((-patterns[i].fixed_count, min(shared), i))
        if not candidates:
            raise DisconnectedQuery(
                f"pattern(s) {', '.join(str(patterns[i]) for i in remaining)} share no variable with the rest"
            )
        _, _, chosen = min(candidates)
        order.append(chosen)
        remaining.remove(chosen)
        for name in patterns[chosen].variables:
            bound_at.setdefault(name, len(order) - 1)

    alpha_nodes: List[AlphaNode] = []
    alpha_of_level: List[int] = []
    for level, index in enumerate(order):
        erased = patterns[index].erase()
        if routable and erased.mask == 0:
            raise UnroutablePattern(f"pattern {patterns[index]} has no fixed slot")
        position = next((n for n, node in enumerate(alpha_nodes) if node.pattern == erased), None)
        if position is None:
            alpha_nodes.append(AlphaNode(erased))
            position = len(alpha_nodes) - 1
        alpha_nodes[position].levels.append(level)
        alpha_of_level.append(position)
    plan = QueryPlan(q, order, alpha_nodes, alpha_of_level)
    logger.debug(f"[MAP] compiled {len(patterns)} pattern(s) into {len(alpha_nodes)} alpha node(s)")
    return plan


def seed(plan: QueryPlan, fetch: Callable[[TuplePattern], Iterable[Tuple7]]) -> List[Binding]:
    """Pull every alpha node's pattern once and run the joins over what came back"""
    completed: List[Binding] = []
    for position, alpha in enumerate(plan.alpha_nodes):
        try:
            tuples = list(fetch(alpha.pattern))
        except NoResponders as e:
            logger.warning(f"⚠️  [MAP] Seeding {alpha.pattern} failed: {e}")
            plan.partial = True
            plan.failed_alphas.append(position)
            continue
        for t in tuples:
            completed.extend(plan.on_tuple(alpha, t))
    plan.seeded = True
    return completed


def evaluate(q: GraphQuery, tuples: Iterable[Tuple7]) -> Set[Binding]:
    """Batch evaluation over a fixed tuple collection"""
    plan = compile_query(q, routable=False)
    pool = list(tuples)
    for alpha in plan.alpha_nodes:
        pattern = alpha.pattern
        for t in pool:
            if all(fixed is None or fixed == value for fixed, value in zip(pattern.slots, t.slots)):
                plan.on_tuple(alpha, t)
    return plan.results()
