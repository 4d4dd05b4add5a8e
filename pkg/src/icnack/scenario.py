"""Scenario files and the simulation runner.

A scenario is an INI file (``[section]`` headers, ``key = value`` lines,
``#`` comments). Every key has a default, so a file only lists what it
changes, but ``[run]`` and ``[topology]`` must be present. The resolved
configuration is written next to each run as a manifest, which is itself a
valid scenario and reproduces the run exactly.

Sections and keys::

    [run]        duration seed bucket drain
    [topology]   kind(star|multipath) consumers routers producers paths
                 routed_paths link_delay queue_capacity core_rate prefix
    [router]     strategy face_timeout cs_capacity congestion_threshold
                 verify_signatures check_cnack_window bloom_screening
                 proc_cost hmac_cost verify_cost
    [producer]   catalog_size pattern sign_cost lookup_cost queue_capacity
                 presign data_freshness gateway cnack_interval
                 cnack_expiration cnack_freshness plausibility
                 bloom_trigger bloom_load_threshold bloom_load_window
                 bloom_period bloom_min_interval bloom_tau bloom_m
                 bloom_shard_depth bloom_target_fp
    [consumers]  workload(basic|zipf) mcp rate malicious_rate zipf_alpha
                 catalog_size suffix_len plausible malicious_namespace
                 retx_limit retx_on_fnack lifetime phase(random|zero)
    [growth]     kind(none|benign|malicious) per_second start stop
    [crypto]     scheme(sim|ed25519) key_seed cnack_window fnack_window
    [sweep]      axis values
"""
from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from .consumer import Consumer, ConsumerKind, ConsumerProfile
from .crypto import KeyRegistry, TimeWindow
from .engine import (
    LinkSpec,
    Metrics,
    MetricsReport,
    Simulator,
    build_multipath,
    build_star,
    node_rng,
    schedule_population_growth,
)
from .packets import ParseError, parse_name
from .producer import PLAUSIBILITY, BloomConfig, Catalog, CnackPolicy, Producer, ServiceModel
from .router import Router, RouterConfig, Strategy


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with ``file:line:`` when known."""


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt(conv: Callable) -> Callable:
    def parse(text: str):
        return None if text.strip().lower() in ("none", "") else conv(text)
    return parse


def _choice(*options: str) -> Callable:
    def parse(text: str) -> str:
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return t
    return parse


def _ints(text: str) -> Optional[list[int]]:
    if text.strip().lower() in ("all", "none", ""):
        return None
    return [int(x) for x in text.replace(",", " ").split()]


def _values(text: str) -> list[str]:
    return [x for x in text.replace(",", " ").split()]


def _name(text: str) -> str:
    parse_name(text.strip())
    return text.strip()


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "run": {
        "duration": (float, 10.0),
        "seed": (int, 0),
        "bucket": (float, 1.0),
        "drain": (float, 1.0),
    },
    "topology": {
        "kind": (_choice("star", "multipath"), "star"),
        "consumers": (int, 1),
        "routers": (int, 1),
        "producers": (int, 1),
        "paths": (int, 2),
        "routed_paths": (_ints, None),
        "link_delay": (float, 0.010),
        "queue_capacity": (int, 1000),
        "core_rate": (_opt(float), None),
        "prefix": (_name, "/p"),
    },
    "router": {
        "strategy": (_choice("parallel", "sequential"), "parallel"),
        "face_timeout": (float, 1.0),
        "cs_capacity": (int, 10000),
        "congestion_threshold": (int, 100),
        "verify_signatures": (_bool, True),
        "check_cnack_window": (_bool, True),
        "bloom_screening": (_bool, True),
        "proc_cost": (float, 0.0),
        "hmac_cost": (float, 0.0),
        "verify_cost": (float, 0.0),
    },
    "producer": {
        "catalog_size": (int, 1000),
        "pattern": (str, "a/{i}"),
        "sign_cost": (float, 0.002),
        "lookup_cost": (float, 0.00005),
        "queue_capacity": (_opt(int), None),
        "presign": (_bool, True),
        "data_freshness": (float, 10.0),
        "gateway": (_bool, False),
        "cnack_interval": (float, 1.0),
        "cnack_expiration": (float, 10.0),
        "cnack_freshness": (float, 10.0),
        "plausibility": (_choice(*PLAUSIBILITY), "default"),
        "bloom_trigger": (_choice("off", "load", "periodic", "publish"), "off"),
        "bloom_load_threshold": (float, 50.0),
        "bloom_load_window": (float, 1.0),
        "bloom_period": (float, 60.0),
        "bloom_min_interval": (float, 1.0),
        "bloom_tau": (float, 60.0),
        "bloom_m": (int, 0),
        "bloom_shard_depth": (_opt(int), 0),
        "bloom_target_fp": (_opt(float), None),
    },
    "consumers": {
        "workload": (_choice("basic", "zipf"), "basic"),
        "mcp": (float, 0.0),
        "rate": (float, 10.0),
        "malicious_rate": (float, 100.0),
        "zipf_alpha": (float, 1.0),
        "catalog_size": (_opt(int), None),
        "suffix_len": (int, 1),
        "plausible": (_bool, True),
        "malicious_namespace": (_opt(_name), None),
        "retx_limit": (int, 3),
        "retx_on_fnack": (_bool, False),
        "lifetime": (float, 4000.0),
        "phase": (_choice("random", "zero"), "random"),
    },
    "growth": {
        "kind": (_choice("none", "benign", "malicious"), "none"),
        "per_second": (float, 1.0),
        "start": (float, 0.0),
        "stop": (float, 0.0),
    },
    "crypto": {
        "scheme": (_choice("sim", "ed25519"), "sim"),
        "key_seed": (str, "producer"),
        "cnack_window": (float, 60.0),
        "fnack_window": (float, 5.0),
    },
    "sweep": {
        "axis": (str, "consumers.mcp"),
        "values": (_values, ["0", "0.1", "0.2", "0.3"]),
    },
}

REQUIRED_SECTIONS = ("run", "topology")

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([A-Za-z0-9_]+)\s*[=:]")


@dataclass
class Scenario:
    """Resolved scenario: typed values for every schema key."""

    values: dict[str, dict[str, Any]]
    raw: dict[str, dict[str, str]] = field(default_factory=dict)
    source: str = "<scenario>"

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def get(self, dotted: str) -> Any:
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    @classmethod
    def parse(cls, text: str, source: str = "<scenario>",
              overrides: Optional[dict[str, str]] = None) -> "Scenario":
        lines: dict[tuple[str, Optional[str]], int] = {}
        section = None
        for lineno, line in enumerate(text.splitlines(), 1):
            m = _SECTION_RE.match(line)
            if m:
                section = m.group(1).strip()
                lines.setdefault((section, None), lineno)
                continue
            m = _KEY_RE.match(line)
            if m and section is not None:
                lines[(section, m.group(1).lower())] = lineno

        def where(sec: str, key: Optional[str] = None) -> str:
            ln = lines.get((sec, key)) or lines.get((sec, None))
            return f"{source}:{ln}" if ln else source

        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            lineno = getattr(exc, "lineno", None)
            if lineno is None and getattr(exc, "errors", None):
                lineno = exc.errors[0][0]
            msg = str(exc).splitlines()[0]
            raise ScenarioError(f"{source}:{lineno}: {msg}" if lineno else f"{source}: {msg}")

        raw = {s: dict(cp[s]) for s in cp.sections()}
        for dotted, value in (overrides or {}).items():
            if "." not in dotted:
                raise ScenarioError(f"override {dotted!r}: expected section.key=value")
            sec, key = dotted.split(".", 1)
            raw.setdefault(sec, {})[key.lower()] = str(value)
            lines[(sec, key.lower())] = 0

        for sec in raw:
            if sec not in SCHEMA:
                raise ScenarioError(f"{where(sec)}: unknown section [{sec}]")
        for sec in REQUIRED_SECTIONS:
            if sec not in raw:
                raise ScenarioError(f"{source}: missing required section [{sec}]")

        values: dict[str, dict[str, Any]] = {}
        for sec, keys in SCHEMA.items():
            given = raw.get(sec, {})
            for key in given:
                if key not in keys:
                    raise ScenarioError(f"{where(sec, key)}: unknown key {key!r} in [{sec}]")
            out = {}
            for key, (conv, default) in keys.items():
                if key in given:
                    try:
                        out[key] = conv(given[key])
                    except (ValueError, ParseError) as exc:
                        raise ScenarioError(f"{where(sec, key)}: {sec}.{key}: {exc}") from None
                else:
                    out[key] = default
            values[sec] = out
        sc = cls(values, raw, source)
        problem = sc.check()
        if problem:
            sec, key, msg = problem
            raise ScenarioError(f"{where(sec, key)}: {msg}")
        return sc

    @classmethod
    def load(cls, path, overrides: Optional[dict[str, str]] = None) -> "Scenario":
        p = Path(path)
        return cls.parse(p.read_text(), str(p), overrides)

    def check(self) -> Optional[tuple[str, str, str]]:
        """First semantic problem as (section, key, message), or None."""
        v = self.values
        run, topo, cons = v["run"], v["topology"], v["consumers"]
        if run["duration"] <= 0:
            return "run", "duration", "duration must be positive"
        if run["bucket"] <= 0:
            return "run", "bucket", "bucket must be positive"
        if run["drain"] < 0:
            return "run", "drain", "drain must be nonnegative"
        if not 0.0 <= cons["mcp"] <= 1.0:
            return "consumers", "mcp", "mcp must lie in [0, 1]"
        if cons["rate"] <= 0 or cons["malicious_rate"] <= 0:
            return "consumers", "rate", "consumer rates must be positive"
        if cons["workload"] == "zipf" and cons["zipf_alpha"] <= 0:
            return "consumers", "zipf_alpha", "zipf_alpha must be positive"
        if topo["consumers"] < 0:
            return "topology", "consumers", "consumer count must be nonnegative"
        if topo["routers"] < 1 or topo["producers"] < 1:
            return "topology", "routers", "need at least one router and one producer"
        if topo["kind"] == "multipath" and topo["paths"] < 1:
            return "topology", "paths", "multipath topology needs at least one path"
        if topo["routed_paths"] and any(not 0 <= i < topo["paths"] for i in topo["routed_paths"]):
            return "topology", "routed_paths", "routed path index out of range"
        if v["producer"]["catalog_size"] < 0:
            return "producer", "catalog_size", "catalog size must be nonnegative"
        if v["producer"]["cnack_expiration"] < v["producer"]["cnack_interval"]:
            return "producer", "cnack_expiration", "cnack_expiration must be >= cnack_interval"
        if v["growth"]["kind"] != "none" and v["growth"]["per_second"] <= 0:
            return "growth", "per_second", "per_second must be positive"
        for key in ("cnack_window", "fnack_window"):
            if v["crypto"][key] <= 0:
                return "crypto", key, f"{key} must be positive"
        if not v["sweep"]["values"]:
            return "sweep", "values", "sweep needs at least one value"
        axis = v["sweep"]["axis"]
        sec, _, key = axis.partition(".")
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            return "sweep", "axis", f"unknown sweep axis {axis!r}"
        return None

    def with_overrides(self, overrides: dict[str, str]) -> "Scenario":
        return Scenario.parse(self.to_ini(), self.source, overrides)

    def to_ini(self) -> str:
        """Fully resolved configuration in scenario syntax."""
        buf = io.StringIO()
        for sec, keys in self.values.items():
            buf.write(f"[{sec}]\n")
            for key, val in keys.items():
                buf.write(f"{key} = {_render(val)}\n")
            buf.write("\n")
        return buf.getvalue()


def _render(val: Any) -> str:
    if val is None:
        return "none"
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, list):
        return ", ".join(str(x) for x in val)
    return str(val)


@dataclass
class RunResult:
    report: MetricsReport
    sim: Simulator
    nodes: dict
    scenario: Scenario
    seed: int

    def consumers(self, malicious: Optional[bool] = None) -> list[Consumer]:
        out = [n for n in self.nodes.values() if isinstance(n, Consumer)]
        if malicious is not None:
            out = [c for c in out if c.malicious == malicious]
        return out


class Network:
    """A scenario materialized into nodes on one simulator."""

    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        v = scenario.values
        self.scenario = scenario
        self.seed = v["run"]["seed"] if seed is None else int(seed)
        self.sim = Simulator()
        self.metrics = Metrics(v["run"]["bucket"])
        crypto = v["crypto"]
        self.keys = KeyRegistry(self.seed, crypto["scheme"])
        topo_v = v["topology"]
        self.prefix = parse_name(topo_v["prefix"])
        self.producer_key = self.keys.register_producer(self.prefix, crypto["key_seed"])
        self._n_benign = self._initial_benign()
        self._grown = 0
        self.edge_router = "r0"

        maker = dict(make_consumer=self._initial_consumer, make_router=self._router,
                     make_producer=self._producer, prefix=topo_v["prefix"])
        if topo_v["kind"] == "star":
            core = LinkSpec(topo_v["link_delay"], topo_v["queue_capacity"], topo_v["core_rate"])
            edge = LinkSpec(topo_v["link_delay"], topo_v["queue_capacity"], None)
            self.topology = build_star(topo_v["consumers"], topo_v["routers"],
                                       topo_v["producers"], topo_v["link_delay"],
                                       edge=edge, core=core, **maker)
        else:
            self.topology = build_multipath(topo_v["consumers"], topo_v["paths"],
                                            topo_v["link_delay"],
                                            routed_paths=topo_v["routed_paths"], **maker)
        topo = self.topology
        for node in topo.nodes.values():
            node.bind(self.sim, self.metrics)
        for rid, entries in topo.fibs.items():
            router = topo.nodes[rid]
            for prefix, peers in entries:
                router.add_route(prefix, [topo.face_towards(rid, p) for p in peers])

    # ----------------------------------------------------------- node makers
    def _initial_benign(self) -> int:
        n = self.scenario["topology"]["consumers"]
        return n - int(round(self.scenario["consumers"]["mcp"] * n))

    def _profile(self, malicious: bool) -> ConsumerProfile:
        c = self.scenario["consumers"]
        prefix = self.scenario["topology"]["prefix"]
        p = self.scenario["producer"]
        pattern_root = p["pattern"].split("{")[0].rstrip("/")
        namespace = prefix.rstrip("/") + ("/" + pattern_root if pattern_root else "")
        catalog = c["catalog_size"] or max(p["catalog_size"], 1)
        if malicious:
            return ConsumerProfile(ConsumerKind.MALICIOUS, c["malicious_rate"],
                                   catalog_size=catalog, suffix_len=c["suffix_len"],
                                   lifetime=c["lifetime"], plausible=c["plausible"],
                                   namespace=c["malicious_namespace"] or namespace)
        kind = ConsumerKind.BENIGN_ZIPF if c["workload"] == "zipf" else ConsumerKind.BENIGN_BASIC
        return ConsumerProfile(kind, c["rate"], zipf_alpha=c["zipf_alpha"], catalog_size=catalog,
                               retx_limit=c["retx_limit"], lifetime=c["lifetime"],
                               namespace=namespace, retx_on_fnack=c["retx_on_fnack"])

    def _consumer(self, node_id: str, malicious: bool) -> Consumer:
        return Consumer(node_id, self._profile(malicious), node_rng(self.seed, node_id),
                        key_digest=self.producer_key.digest, keys=self.keys,
                        fnack_window=self.scenario["crypto"]["fnack_window"])

    def _initial_consumer(self, node_id: str) -> Consumer:
        index = int(node_id[1:])
        return self._consumer(node_id, malicious=index >= self._n_benign)

    def _router(self, node_id: str) -> Router:
        r = self.scenario["router"]
        cr = self.scenario["crypto"]
        cfg = RouterConfig(
            strategy=Strategy(r["strategy"]), face_timeout=r["face_timeout"],
            cs_capacity=r["cs_capacity"], congestion_threshold=r["congestion_threshold"],
            verify_signatures=r["verify_signatures"],
            check_cnack_window=r["check_cnack_window"], cnack_window=cr["cnack_window"],
            fnack_window=cr["fnack_window"], bloom_screening=r["bloom_screening"],
            proc_cost=r["proc_cost"], hmac_cost=r["hmac_cost"], verify_cost=r["verify_cost"])
        return Router(node_id, cfg, self.keys)

    def _producer(self, node_id: str) -> Producer:
        p = self.scenario["producer"]
        catalog = Catalog.from_pattern(self.scenario["topology"]["prefix"], p["catalog_size"],
                                       p["pattern"])
        policy = CnackPolicy(p["cnack_interval"], p["cnack_expiration"],
                             TimeWindow(self.scenario["crypto"]["cnack_window"]),
                             PLAUSIBILITY[p["plausibility"]], p["cnack_freshness"])
        bloom = BloomConfig(
            trigger=p["bloom_trigger"], load_threshold=p["bloom_load_threshold"],
            load_window=p["bloom_load_window"], period=p["bloom_period"],
            min_interval=p["bloom_min_interval"], tau=p["bloom_tau"], m=p["bloom_m"],
            shard_depth=p["bloom_shard_depth"], target_fp=p["bloom_target_fp"])

        def service():
            return ServiceModel(p["sign_cost"], p["lookup_cost"], p["queue_capacity"])

        return Producer(node_id, catalog, self.producer_key, policy, service(), bloom,
                        data_freshness=p["data_freshness"], presign=p["presign"],
                        gateway=p["gateway"], nack_service=service())

    # ---------------------------------------------------------------- growth
    def add_consumer(self, malicious: bool, start: bool = True) -> Consumer:
        self._grown += 1
        node_id = f"g{self._grown - 1}"
        c = self._consumer(node_id, malicious)
        self.topology.add(c)
        c.bind(self.sim, self.metrics)
        self.topology.connect(node_id, self.edge_router, self.scenario["topology"]["link_delay"],
                              self.scenario["topology"]["queue_capacity"])
        c.stop_at = self.scenario["run"]["duration"]
        if start:
            c.start(self.sim.now, self._phase(c))
        self.metrics.inc(node_id, "joined", self.sim.now)
        return c

    def _phase(self, c: Consumer) -> Optional[float]:
        return 0.0 if self.scenario["consumers"]["phase"] == "zero" else None

    def run(self) -> RunResult:
        v = self.scenario.values
        duration = v["run"]["duration"]
        for node in list(self.topology.nodes.values()):
            if isinstance(node, Consumer):
                node.stop_at = duration
                node.start(0.0, self._phase(node))
        g = v["growth"]
        if g["kind"] != "none":
            malicious = g["kind"] == "malicious"
            for ev in schedule_population_growth(g["kind"], g["per_second"], g["stop"], g["start"]):
                if ev.time < duration:
                    self.sim.schedule(ev.time, self, self.add_consumer, malicious)
        self.sim.run(until=duration + v["run"]["drain"])
        return RunResult(self.metrics.report(), self.sim, self.topology.nodes,
                         self.scenario, self.seed)


def run(scenario: Scenario, seed: Optional[int] = None) -> MetricsReport:
    """Execute ``scenario``; the report is a pure function of (scenario, seed)."""
    return Network(scenario, seed).run().report


def run_detailed(scenario: Scenario, seed: Optional[int] = None) -> RunResult:
    return Network(scenario, seed).run()


def manifest_text(scenario: Scenario, seed: int) -> str:
    sc = scenario.with_overrides({"run.seed": str(seed)})
    return "# resolved scenario; re-run with `icnack run <this file>`\n" + sc.to_ini()


BUNDLED = ("fig2", "fig3", "fig5", "fig6", "mitigation")


def bundled_path(name: str) -> Path:
    path = Path(__file__).parent / "scenarios" / f"{name}.scn"
    if not path.exists():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return path


def mean_in(report: MetricsReport, metric: str, t0: float = -math.inf,
            t1: float = math.inf, node=None) -> float:
    return report.mean(metric, node=node, t0=t0, t1=t1)
