"""
Flood-warning scenario harness on the simulator.

A script declares the network, the agents (gauge, monitor, engineer, council,
public), a schedule of timed events and the assertions checked at the end.
Example:

    network nodes=12 seed=7 k=4 replication=3 drift=0.2
    agent gauge upper node=1 catchment=yarra level=1180 rise=40
    agent monitor bom node=7 catchment=yarra threshold=1000
    at 1 emit upper
    at 5 partition 0-5 6-11
    at 9 heal
    run 20
    expect delivered shire min=1

Information flows gauge -reading-> level, monitor -analysis-of-> gauge,
engineer -reports-on-> analysis and council -alerts-> report, all in the
catchment's context, so every alert can be traced back to gauge readings.
"""

import logging
import random
import re
import uuid
from collections import deque
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Set, Tuple

from pydantic import BaseModel, Field

from gin.config import EventLog, Settings
from gin.errors import GinError, NoResponders, ScriptError
from gin.query import Binding, GraphQuery, QueryPattern, Var
from gin.simulator import TICK_MICROS, Simulation
from gin.tuples import Tuple7, tuple_id

logger = logging.getLogger(__name__)

DEFAULT_VOCABULARY = Path(__file__).resolve().parent.parent / "fixtures" / "flood_vocabulary.txt"
REQUIRED_LABELS = ("namespace", "reading", "analysis-of", "reports-on", "alerts")

Role = Literal["gauge", "monitor", "engineer", "council", "public"]
Action = Literal["emit", "partition", "heal", "crash", "restart", "query"]
ExpectKind = Literal["delivered", "provenance", "converged", "heal-delivery", "ordered"]


# ---------------------------------------------------------------------------
# Script model and parser
# ---------------------------------------------------------------------------


class NetworkSpec(BaseModel):
    nodes: int = Field(8, gt=0)
    seed: int = 0
    k: int = Field(4, gt=0)
    alpha: int = Field(3, gt=0)
    replication: int = Field(3, gt=0)
    fanout: int = Field(1, gt=0)
    drift: float = Field(0.0, ge=0)
    latency: int = Field(1000, ge=0)
    drop: float = Field(0.0, ge=0, lt=1)


class AgentSpec(BaseModel):
    role: Role
    name: str
    node: int
    seed: int = 0
    params: Dict[str, str] = {}
    line: int


class ScheduledEvent(BaseModel):
    tick: int
    action: Action
    args: List[str] = []
    line: int


class Expectation(BaseModel):
    kind: ExpectKind
    target: Optional[str] = None
    params: Dict[str, str] = {}
    line: int


class ScenarioScript(BaseModel):
    name: str = "<script>"
    network: NetworkSpec = NetworkSpec()
    vocabulary: str = str(DEFAULT_VOCABULARY)
    agents: List[AgentSpec] = []
    schedule: List[ScheduledEvent] = []
    expected: List[Expectation] = []
    run_ticks: int = 0


def _tokens(line: str) -> List[Tuple[str, int]]:
    return [(m.group(0), m.start() + 1) for m in re.finditer(r"\S+", line)]


def _key_values(tokens: List[Tuple[str, int]], number: int) -> Dict[str, Tuple[str, int]]:
    values = {}
    for token, position in tokens:
        if "=" not in token:
            raise ScriptError(f"expected key=value, got {token!r}", number, position)
        key, value = token.split("=", 1)
        if not key or not value:
            raise ScriptError(f"malformed parameter {token!r}", number, position)
        values[key] = (value, position)
    return values


def _int(value: str, number: int, position: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ScriptError(f"expected an integer, got {value!r}", number, position) from None


def parse_node_group(text: str, number: int, position: int) -> List[int]:
    """`0-5` or `0,2,4` (or a mix: `0-2,7`)"""
    members: List[int] = []
    for part in text.split(","):
        if "-" in part:
            low, high = part.split("-", 1)
            members.extend(range(_int(low, number, position), _int(high, number, position) + 1))
        else:
            members.append(_int(part, number, position))
    return members


def parse_script(text: str, name: str = "<script>", base_dir: Optional[str] = None) -> ScenarioScript:
    script = ScenarioScript(name=name)
    network_seen = False
    run_seen = False
    agents: Dict[str, AgentSpec] = {}

    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        tokens = _tokens(line)
        if not tokens:
            continue
        keyword, _ = tokens[0]

        if keyword == "network":
            if network_seen:
                raise ScriptError("duplicate network line", number, 1)
            params = _key_values(tokens[1:], number)
            try:
                script.network = NetworkSpec(**{key: value for key, (value, _) in params.items()})
            except ValueError as e:
                raise ScriptError(f"bad network parameters: {e}", number, tokens[1][1] if len(tokens) > 1 else 1) from e
            network_seen = True

        elif keyword == "vocabulary":
            if len(tokens) != 2:
                raise ScriptError("vocabulary takes one path", number, 1)
            path = Path(tokens[1][0])
            if not path.is_absolute() and base_dir:
                path = Path(base_dir) / path
            script.vocabulary = str(path)

        elif keyword == "agent":
            if len(tokens) < 4:
                raise ScriptError("agent needs a role, a name and node=<index>", number, 1)
            role, role_at = tokens[1]
            if role not in ROLES:
                raise ScriptError(f"unknown role {role!r}", number, role_at)
            agent_name, name_at = tokens[2]
            if agent_name in agents:
                raise ScriptError(f"duplicate agent {agent_name!r}", number, name_at)
            params = _key_values(tokens[3:], number)
            if "node" not in params:
                raise ScriptError("agent needs node=<index>", number, tokens[3][1])
            node_text, node_at = params.pop("node")
            node = _int(node_text, number, node_at)
            if not 0 <= node < script.network.nodes:
                raise ScriptError(f"node {node} outside 0..{script.network.nodes - 1}", number, node_at)
            seed = 0
            if "seed" in params:
                seed_text, seed_at = params.pop("seed")
                seed = _int(seed_text, number, seed_at)
            if "catchment" not in params:
                raise ScriptError(f"{role} agent needs catchment=<label>", number, tokens[0][1])
            spec = AgentSpec(
                role=role,
                name=agent_name,
                node=node,
                seed=seed,
                params={key: value for key, (value, _) in params.items()},
                line=number,
            )
            agents[agent_name] = spec
            script.agents.append(spec)

        elif keyword == "at":
            if len(tokens) < 3:
                raise ScriptError("expected: at <tick> <action> [args]", number, 1)
            tick = _int(tokens[1][0], number, tokens[1][1])
            if tick < 0:
                raise ScriptError("tick must be >= 0", number, tokens[1][1])
            action, action_at = tokens[2]
            args = [token for token, _ in tokens[3:]]
            if action not in ("emit", "partition", "heal", "crash", "restart", "query"):
                raise ScriptError(f"unknown action {action!r}", number, action_at)
            if action in ("emit", "query"):
                if len(args) != 1 or args[0] not in agents:
                    raise ScriptError(f"{action} needs one declared agent", number, action_at)
                if action == "emit" and agents[args[0]].role != "gauge":
                    raise ScriptError(f"only gauges emit, {args[0]!r} is a {agents[args[0]].role}", number, tokens[3][1])
            elif action == "partition":
                if len(args) < 2:
                    raise ScriptError("partition needs at least two node groups", number, action_at)
                for token, position in tokens[3:]:
                    for member in parse_node_group(token, number, position):
                        if not 0 <= member < script.network.nodes:
                            raise ScriptError(f"node {member} outside the network", number, position)
            elif action in ("crash", "restart"):
                if len(args) != 1:
                    raise ScriptError(f"{action} needs one node index", number, action_at)
                node = _int(args[0], number, tokens[3][1])
                if not 0 <= node < script.network.nodes:
                    raise ScriptError(f"node {node} outside the network", number, tokens[3][1])
            script.schedule.append(ScheduledEvent(tick=tick, action=action, args=args, line=number))

        elif keyword == "run":
            if len(tokens) != 2:
                raise ScriptError("run takes a tick count", number, 1)
            script.run_ticks = _int(tokens[1][0], number, tokens[1][1])
            run_seen = True

        elif keyword == "expect":
            if len(tokens) < 2:
                raise ScriptError("expect needs a kind", number, 1)
            kind, kind_at = tokens[1]
            if kind not in ("delivered", "provenance", "converged", "heal-delivery", "ordered"):
                raise ScriptError(f"unknown assertion {kind!r}", number, kind_at)
            rest = tokens[2:]
            target = None
            if kind in ("delivered", "provenance", "heal-delivery"):
                if not rest or rest[0][0] not in agents:
                    raise ScriptError(f"{kind} needs a declared agent", number, kind_at)
                target = rest[0][0]
                rest = rest[1:]
            params = _key_values(rest, number)
            script.expected.append(
                Expectation(kind=kind, target=target, params={key: value for key, (value, _) in params.items()}, line=number)
            )

        else:
            raise ScriptError(f"unknown directive {keyword!r}", number, 1)

    last = max((event.tick for event in script.schedule), default=0)
    if not run_seen:
        script.run_ticks = last
    elif last > script.run_ticks:
        late = next(event for event in script.schedule if event.tick == last)
        raise ScriptError(f"event at tick {last} is after the last tick {script.run_ticks}", late.line, 1)
    return script


def load_script(path: str) -> ScenarioScript:
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return parse_script(text, name=Path(path).name, base_dir=str(Path(path).parent))


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


class Vocabulary(BaseModel):
    labels: Dict[str, uuid.UUID]

    def __getitem__(self, label: str) -> uuid.UUID:
        return self.labels[label]

    def vertex(self, kind: str, *parts: Any) -> uuid.UUID:
        return uuid.uuid5(self.labels["namespace"], ":".join([kind, *map(str, parts)]))


def load_vocabulary(path: str) -> Vocabulary:
    labels = {}
    with open(path, encoding="utf-8") as f:
        for number, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ScriptError(f"{path}: expected 'label uuid'", number)
            try:
                labels[fields[0]] = uuid.UUID(fields[1])
            except ValueError as e:
                raise ScriptError(f"{path}: {e}", number) from e
    missing = [label for label in REQUIRED_LABELS if label not in labels]
    if missing:
        raise ScriptError(f"{path}: vocabulary lacks {', '.join(missing)}")
    return Vocabulary(labels=labels)


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


class Agent:
    role = ""

    def __init__(self, spec: AgentSpec, harness: "ScenarioRun"):
        self.spec = spec
        self.name = spec.name
        self.harness = harness
        self.vocab = harness.vocab
        self.client = harness.sim.clients[spec.node]
        self.node = self.client.node
        self.added: List[Tuple7] = []
        self.deliveries: List[Tuple[int, Binding]] = []
        self.handle = None
        catchment = spec.params.get("catchment")
        if catchment is not None and catchment not in self.vocab.labels:
            raise ScriptError(f"unknown catchment {catchment!r}", spec.line)
        self.context = self.vocab[catchment] if catchment else None

    def query(self) -> Optional[GraphQuery]:
        return None

    def start(self) -> None:
        q = self.query()
        if q is not None:
            self.handle = self.client.map(q, self._on_binding)

    def _on_binding(self, binding: Binding) -> None:
        tick = self.harness.sim.ticks
        self.deliveries.append((tick, binding))
        self.harness.trace_event(
            self,
            "deliver",
            {"agent": self.name, "tick": tick, "binding": {name: str(value) for name, value in binding.values}},
        )
        self.react(binding)

    def react(self, binding: Binding) -> None:
        pass

    def publish(self, source: uuid.UUID, edge: uuid.UUID, target: uuid.UUID) -> Tuple7:
        t = Tuple7(source=source, edge=edge, target=target, context=self.context, timestamp=self.node.clock())
        try:
            self.client.add([t])
        except GinError as e:
            logger.warning(f"⚠️  [SIM] {self.name} could not publish: {e}")
        self.added.append(t)
        self.harness.trace_event(self, "publish", {"agent": self.name, "tuple": tuple_id(t).hex()})
        return t

    def probe(self) -> int:
        """One-shot multi_get over this agent's first pattern; -1 if nobody answered"""
        q = self.query()
        if q is None:
            return 0
        try:
            return len(self.client.get(q.patterns[0].erase()))
        except NoResponders:
            return -1


def _var(name: str) -> Var:
    return Var(name=name)


class GaugeAgent(Agent):
    role = "gauge"

    def __init__(self, spec: AgentSpec, harness: "ScenarioRun"):
        super().__init__(spec, harness)
        self.level = int(spec.params.get("level", "1000"))
        self.rise = int(spec.params.get("rise", "0"))
        self.noise = int(spec.params.get("noise", "0"))
        self.rng = random.Random(f"{spec.name}:{spec.seed}")
        self.vertex = self.vocab.vertex("gauge", spec.name)
        self.emitted = 0

    def emit(self) -> Tuple7:
        level = self.level + self.rise * self.emitted
        if self.noise:
            level = max(0, level + self.rng.randint(-self.noise, self.noise))
        self.emitted += 1
        # a level vertex carries the reading in millimetres
        return self.publish(self.vertex, self.vocab["reading"], uuid.UUID(int=level))


class MonitorAgent(Agent):
    role = "monitor"

    def __init__(self, spec: AgentSpec, harness: "ScenarioRun"):
        super().__init__(spec, harness)
        self.threshold = int(spec.params.get("threshold", "1000"))

    def query(self) -> GraphQuery:
        return GraphQuery(patterns=(QueryPattern(slots=(_var("g"), self.vocab["reading"], _var("v"), self.context)),))

    def react(self, binding: Binding) -> None:
        gauge, level = binding.get("g"), binding.get("v")
        if level.int >= self.threshold:
            analysis = self.vocab.vertex("analysis", gauge, level.int)
            self.publish(analysis, self.vocab["analysis-of"], gauge)


class EngineerAgent(Agent):
    role = "engineer"

    def __init__(self, spec: AgentSpec, harness: "ScenarioRun"):
        super().__init__(spec, harness)
        self.reported: Set[uuid.UUID] = set()

    def query(self) -> GraphQuery:
        return GraphQuery(
            patterns=(
                QueryPattern(slots=(_var("a"), self.vocab["analysis-of"], _var("g"), self.context)),
                QueryPattern(slots=(_var("g"), self.vocab["reading"], _var("v"), self.context)),
            )
        )

    def react(self, binding: Binding) -> None:
        analysis = binding.get("a")
        if analysis in self.reported:
            return
        self.reported.add(analysis)
        self.publish(self.vocab.vertex("report", analysis), self.vocab["reports-on"], analysis)


class CouncilAgent(Agent):
    role = "council"

    def __init__(self, spec: AgentSpec, harness: "ScenarioRun"):
        super().__init__(spec, harness)
        self.alerted: Set[uuid.UUID] = set()

    def query(self) -> GraphQuery:
        return GraphQuery(
            patterns=(
                QueryPattern(slots=(_var("r"), self.vocab["reports-on"], _var("a"), self.context)),
                QueryPattern(slots=(_var("a"), self.vocab["analysis-of"], _var("g"), self.context)),
            )
        )

    def react(self, binding: Binding) -> None:
        report = binding.get("r")
        if report in self.alerted:
            return
        self.alerted.add(report)
        self.publish(self.vocab.vertex("alert", report), self.vocab["alerts"], report)


class PublicAgent(Agent):
    role = "public"

    def query(self) -> GraphQuery:
        return GraphQuery(patterns=(QueryPattern(slots=(_var("l"), self.vocab["alerts"], _var("r"), self.context)),))


ROLES = {
    "gauge": GaugeAgent,
    "monitor": MonitorAgent,
    "engineer": EngineerAgent,
    "council": CouncilAgent,
    "public": PublicAgent,
}


# ---------------------------------------------------------------------------
# Run and report
# ---------------------------------------------------------------------------


class AssertionResult(BaseModel):
    kind: str
    target: Optional[str] = None
    line: int
    passed: bool
    detail: str = ""


class ScenarioReport(BaseModel):
    name: str
    passed: bool
    ticks: int
    assertions: List[AssertionResult] = []
    metrics: Dict[str, Any] = {}


class SimulationResult(BaseModel):
    trace: str
    report: ScenarioReport


def reaches_reading(start: Tuple7, by_source: Dict[Tuple[uuid.UUID, uuid.UUID], List[Tuple7]], reading: uuid.UUID) -> bool:
    """Follow target -> source links inside one context until a gauge reading turns up"""
    queue = deque([start])
    seen = {tuple_id(start)}
    while queue:
        t = queue.popleft()
        if t.edge == reading:
            return True
        for nxt in by_source.get((t.target, t.context), []):
            tid = tuple_id(nxt)
            if tid not in seen:
                seen.add(tid)
                queue.append(nxt)
    return False


class ScenarioRun:
    def __init__(self, script: ScenarioScript):
        self.script = script
        self.vocab = load_vocabulary(script.vocabulary)
        net = script.network
        settings = Settings(k=net.k, alpha=net.alpha, replication=net.replication, fanout=net.fanout)
        self.sim = Simulation(
            net.nodes, seed=net.seed, settings=settings, latency=net.latency, drop=net.drop, drift_ticks=net.drift
        )
        self.trace = EventLog(keep=True)
        self.agents: Dict[str, Agent] = {}
        for spec in script.agents:
            self.agents[spec.name] = ROLES[spec.role](spec, self)
        self.first_emit: Optional[int] = None
        self.heal_ticks: List[int] = []
        self.transferred_at_heal = 0
        # node -> side of the latest partition, and how much each agent had published before it
        self.sides: Dict[int, int] = {}
        self.published_before_split: Dict[str, int] = {}
        self.recording = False

    def trace_event(self, agent: Agent, event: str, payload: Dict[str, Any]) -> None:
        if self.recording:
            self.trace.emit(self.sim.network.time, agent.node.name, event, payload)

    def _harness_event(self, event: str, payload: Dict[str, Any]) -> None:
        self.trace.emit(self.sim.network.time, "harness", event, payload)

    def apply(self, event: ScheduledEvent) -> None:
        if event.action == "emit":
            gauge = self.agents[event.args[0]]
            if not self.sim.alive(gauge.spec.node):
                self._harness_event("skipped", {"agent": gauge.name, "reason": "node down"})
                return
            if self.first_emit is None:
                self.first_emit = self.sim.ticks
            gauge.emit()
        elif event.action == "partition":
            groups = [parse_node_group(arg, event.line, 1) for arg in event.args]
            self.sim.partition(groups)
            self.sides = {node: side for side, group in enumerate(groups) for node in group}
            self.published_before_split = {name: len(agent.added) for name, agent in self.agents.items()}
            self._harness_event("partition", {"groups": groups})
        elif event.action == "heal":
            self.sim.heal()
            self.heal_ticks.append(self.sim.ticks)
            self.transferred_at_heal = self.sim.transferred()
            self._harness_event("heal", {})
        elif event.action == "crash":
            self.sim.crash(int(event.args[0]))
            self._harness_event("crash", {"node": int(event.args[0])})
        elif event.action == "restart":
            self.sim.restart(int(event.args[0]))
            self._harness_event("restart", {"node": int(event.args[0])})
        elif event.action == "query":
            agent = self.agents[event.args[0]]
            self._harness_event("query", {"agent": agent.name, "count": agent.probe()})
        self.sim.settle()

    def run(self) -> SimulationResult:
        for agent in self.agents.values():
            agent.start()
        self.sim.settle()
        self.sim.set_event_log(self.trace)
        self.recording = True
        by_tick: Dict[int, List[ScheduledEvent]] = {}
        for event in self.script.schedule:
            by_tick.setdefault(event.tick, []).append(event)
        for tick in range(self.script.run_ticks + 1):
            if tick > 0:
                self.sim.tick()
            for event in by_tick.get(tick, []):
                self.apply(event)
        report = self.report()
        logger.info(
            f"{'✅' if report.passed else '❌'} [SIM] {self.script.name}: "
            f"{sum(a.passed for a in report.assertions)}/{len(report.assertions)} assertion(s) passed"
        )
        return SimulationResult(trace=self.trace.text(), report=report)

    # --- assertions -----------------------------------------------------------

    def _check(self, expectation: Expectation) -> Tuple[bool, str]:
        agent = self.agents.get(expectation.target) if expectation.target else None
        kind = expectation.kind
        if kind == "delivered":
            minimum = int(expectation.params.get("min", "1"))
            count = len(agent.deliveries)
            return count >= minimum, f"{count} binding(s) delivered, wanted >= {minimum}"
        if kind == "converged":
            roots = set(self.sim.digests())
            return len(roots) <= 1, f"{len(roots)} distinct digest(s) over {len(self.sim.live_nodes())} live node(s)"
        if kind == "heal-delivery":
            within = int(expectation.params.get("within", "20"))
            if not self.heal_ticks:
                return False, "no heal event in the schedule"
            healed = self.heal_ticks[-1]
            crossing = self._published_across(agent)
            late = [
                tick for tick, binding in agent.deliveries if tick >= healed and crossing.intersection(binding.witnesses)
            ]
            if not late:
                return False, f"nothing from across the partition delivered after the heal at tick {healed}"
            first = min(late)
            return first - healed <= within, f"first delivery from across the partition {first - healed} tick(s) after the heal"
        if kind == "provenance":
            return self._check_provenance(agent)
        if kind == "ordered":
            return self._check_ordering(float(expectation.params.get("slack", self.script.network.drift)))
        return False, f"unsupported assertion {kind}"

    def _side(self, node: int) -> int:
        # unlisted nodes reach nobody, each is a side of its own
        return self.sides.get(node, -1 - node)

    def _published_across(self, agent: Agent) -> Set[bytes]:
        """Ids of tuples published since the partition by agents on other sides"""
        side = self._side(agent.spec.node)
        return {
            tuple_id(t)
            for other in self.agents.values()
            if self._side(other.spec.node) != side
            for t in other.added[self.published_before_split.get(other.name, 0) :]
        }

    def _check_provenance(self, agent: Agent) -> Tuple[bool, str]:
        if agent.added:
            roots = list(agent.added)
        elif agent.handle is not None:
            roots = sorted(agent.handle.local_graph(), key=tuple_id)
        else:
            roots = []
        if not roots:
            return False, "no tuples to trace"
        by_source: Dict[Tuple[uuid.UUID, uuid.UUID], List[Tuple7]] = {}
        for t in self.sim.global_tuples():
            by_source.setdefault((t.source, t.context), []).append(t)
        reading = self.vocab["reading"]
        broken = [t for t in roots if not reaches_reading(t, by_source, reading)]
        return not broken, f"{len(roots) - len(broken)}/{len(roots)} tuple(s) trace back to a gauge reading"

    def _check_ordering(self, slack_ticks: float) -> Tuple[bool, str]:
        slack = int(slack_ticks * TICK_MICROS)
        for agent in self.agents.values():
            stamps = [t.timestamp for t in agent.added]
            for earlier, later in zip(stamps, stamps[1:]):
                if later < earlier - slack:
                    return False, f"{agent.name} published out of order ({later} < {earlier})"
        return True, "per-agent timestamps ordered within the drift bound"

    def report(self) -> ScenarioReport:
        results = []
        for expectation in self.script.expected:
            passed, detail = self._check(expectation)
            results.append(
                AssertionResult(
                    kind=expectation.kind, target=expectation.target, line=expectation.line, passed=passed, detail=detail
                )
            )
        deliveries = {name: len(agent.deliveries) for name, agent in self.agents.items() if agent.handle is not None}
        latency = {}
        for name, agent in self.agents.items():
            if agent.deliveries and self.first_emit is not None:
                latency[name] = agent.deliveries[0][0] - self.first_emit
        metrics = {
            **self.sim.network.metrics.model_dump(),
            "gossip_transferred": self.sim.transferred(),
            "merge_transferred": self.sim.transferred() - self.transferred_at_heal if self.heal_ticks else 0,
            "deliveries": deliveries,
            "delivery_latency_ticks": latency,
            "tuples": len(self.sim.global_tuples()),
        }
        return ScenarioReport(
            name=self.script.name,
            passed=all(result.passed for result in results),
            ticks=self.script.run_ticks,
            assertions=results,
            metrics=metrics,
        )


def run_simulation(script: ScenarioScript, trace_path: Optional[str] = None) -> SimulationResult:
    result = ScenarioRun(script).run()
    if trace_path:
        with open(trace_path, "w", encoding="utf-8") as f:
            f.write(result.trace)
    return result
