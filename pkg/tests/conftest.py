import math
from dataclasses import dataclass, field

import pytest

from icnack.crypto import KeyRegistry, sign_content
from icnack.engine import Metrics, Node, Simulator, Topology
from icnack.packets import ContentObject, ContentType, Interest, parse_name
from icnack.router import Router, RouterConfig


class Probe(Node):
    """Scripted endpoint: records what arrives, optionally replies."""

    def __init__(self, node_id, kind="consumer", reply=None):
        super().__init__(node_id)
        self.kind = kind
        self.inbox = []
        self.reply = reply  # callable(probe, packet, face_id) or None

    def receive(self, packet, face_id):
        self.inbox.append((self.sim.now, packet, face_id))
        if self.reply is not None:
            self.reply(self, packet, face_id)

    def got(self, cls):
        return [p for _, p, _ in self.inbox if isinstance(p, cls)]


@dataclass
class Bench:
    sim: Simulator
    metrics: Metrics
    keys: KeyRegistry
    topo: Topology
    router: Router
    downs: list = field(default_factory=list)
    ups: list = field(default_factory=list)

    def at(self, t, fn, *args):
        self.sim.schedule(t, None, fn, *args)

    def run(self, until=math.inf):
        self.sim.run(until)

    def counter(self, metric, node="r0"):
        return self.metrics.report().total(metric, node=node)


def make_bench(n_down=1, ups=1, config=None, prefix="/p", down_kind="consumer",
               link_delay=0.01, up_rate=None, up_capacity=1000):
    """Router r0 with probe downstreams d0.. and upstreams u0.. (or given nodes)."""
    sim = Simulator()
    metrics = Metrics(1.0)
    keys = KeyRegistry(7)
    topo = Topology()
    router = topo.add(Router("r0", config or RouterConfig(), keys))
    downs = [topo.add(Probe(f"d{i}", down_kind)) for i in range(n_down)]
    up_nodes = ups if isinstance(ups, list) else [Probe(f"u{i}", "router") for i in range(ups)]
    for u in up_nodes:
        topo.add(u)
    for d in downs:
        topo.connect(d.node_id, "r0", link_delay)
    for u in up_nodes:
        topo.connect("r0", u.node_id, link_delay, up_capacity, up_rate)
    for n in topo.nodes.values():
        n.bind(sim, metrics)
    if up_nodes and prefix is not None:
        router.add_route(prefix, [topo.face_towards("r0", u.node_id) for u in up_nodes])
    return Bench(sim, metrics, keys, topo, router, downs, up_nodes)


@pytest.fixture
def producer_key():
    return KeyRegistry(7).register_producer(parse_name("/p"), "producer")


def signed(name, key, content_type=ContentType.DATA, **kw):
    if isinstance(name, str):
        name = parse_name(name)
    if content_type == ContentType.CNACK:
        kw.setdefault("expiration", kw.get("timestamp", 0.0) + 10.0)
    kw.setdefault("freshness", 10.0)
    return sign_content(ContentObject(name, content_type=content_type, **kw), key)


def interest(name, key=None, **kw):
    if isinstance(name, str):
        name = parse_name(name)
    return Interest(name, key_digest=None if key is None else key.digest, **kw)


def fnack_responder(outcome, key):
    """Upstream behaviour for one face: 'F' fNACK, 'T' silence, 'C' content."""
    from icnack.crypto import mac_fnack
    from icnack.packets import FNack, NackReason

    def reply(probe, packet, face_id):
        if not isinstance(packet, Interest):
            return
        if outcome == "F":
            link = probe.faces[face_id].link
            k = KeyRegistry(7).link_key(*link.endpoints)
            probe.send(face_id, mac_fnack(FNack(packet.name, NackReason.NO_ROUTE, probe.sim.now), k))
        elif outcome == "C":
            probe.send(face_id, signed(packet.name, key))
    return reply


def run_fnack_case(strategy, outcomes, key):
    """Router with one upstream per outcome; one consumer asks for /p/x."""
    ups = [Probe(f"u{i}", "router", reply=fnack_responder(o, key)) for i, o in enumerate(outcomes)]
    bench = make_bench(1, ups, RouterConfig(strategy=strategy))
    d = bench.downs[0]
    bench.at(0.0, d.send, 0, interest("/p/x", key))
    bench.run()
    return bench


def fnack_expectation(strategy, outcomes):
    """Reference rules: (fnack downstream, content downstream, upstream interests)."""
    from icnack.router import Strategy
    any_content = "C" in outcomes
    all_fnack = all(o == "F" for o in outcomes)
    if strategy is Strategy.PARALLEL:
        tried = len(outcomes)
    else:
        tried = outcomes.index("C") + 1 if any_content else len(outcomes)
    return all_fnack, any_content, tried


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[str, str] = {}


def record_criterion(label, ok, detail=""):
    line = f"criterion {label}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES[label] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for label in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[label])
