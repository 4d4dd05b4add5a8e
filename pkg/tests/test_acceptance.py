"""Acceptance criteria 1-8, each at its stated tolerance and time budget.

Every criterion records one PASS/FAIL line, shown in the terminal summary
under "acceptance criteria". The figure-scale scenarios take several minutes.
"""
import itertools
import time
from dataclasses import replace

import pytest

from conftest import (Probe, fnack_expectation, interest, make_bench, record_criterion,
                      run_fnack_case, signed)
from icnack.bloom import build_filter, fp_approx, fp_exact, fp_optimal, optimal_k
from icnack.consumer import Consumer, ConsumerKind, ConsumerProfile
from icnack.crypto import KeyPair, KeyRegistry, mac_fnack
from icnack.engine import Metrics, Simulator, Topology, node_rng
from icnack.packets import ContentObject, ContentType, FNack, Interest, NackReason, parse_name
from icnack.producer import Catalog, CnackPolicy, Producer, ServiceModel
from icnack.router import FaceState, RouterConfig, Strategy
from icnack.scenario import BUNDLED, Network, Scenario, bundled_path, mean_in, run

# 0.6185^(m/n), 40-digit reference values
OPTIMAL_REF = {5: 0.09051040742218615625, 10: 0.00819213385173013084,
               15: 0.00074147337257717730, 20: 0.00006711105704466275}


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def bundled(name, **overrides):
    return Scenario.load(bundled_path(name), {k.replace("__", "."): str(v)
                                              for k, v in overrides.items()})


# --------------------------------------------------------------------- 1
def test_criterion_1_fnack_oracle(producer_key):
    t0 = time.perf_counter()
    cases = mismatches = 0
    for strategy in Strategy:
        for n in (1, 2, 3):
            for outcomes in map("".join, itertools.product("FTC", repeat=n)):
                cases += 1
                b = run_fnack_case(strategy, outcomes, producer_key)
                want_fnack, want_content, tried = fnack_expectation(strategy, outcomes)
                d = b.downs[0]
                got_fnack = bool(d.got(FNack))
                ok = (got_fnack == want_fnack
                      and bool(d.got(ContentObject)) == want_content
                      and sum(len(u.got(Interest)) for u in b.ups) == tried
                      and not (got_fnack and "T" in outcomes))
                mismatches += not ok
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and cases == 78 and elapsed < 1.0
    record_criterion("1", ok, f"{cases - mismatches}/{cases} cases, {elapsed:.2f}s")
    assert mismatches == 0 and cases == 78
    assert elapsed < 1.0


# --------------------------------------------------------------------- 2
MC_PROBES = 100_000


def _monte_carlo(m, n, k, seed):
    members = [parse_name(f"/p/a/{seed}-{i}") for i in range(n)]
    flt = build_filter(members, m, k, seed=seed)
    hits = sum(flt.query(parse_name(f"/p/b/{seed}-{j}")) for j in range(MC_PROBES))
    return hits / MC_PROBES


@pytest.fixture(scope="module")
def criterion2():
    t0 = time.perf_counter()
    agree = max(abs(fp_exact(m, n, k) - fp_approx(m, n, k))
                for m in (1000, 4096, 65536, 10**6) for n in (10, 100, 1000, 5000)
                for k in (1, 4, 8, 16))
    optimal = max(abs(fp_optimal(r * 1000, 1000) - ref) for r, ref in OPTIMAL_REF.items())
    mc = {}
    for n in (500, 1000, 2000):
        k = optimal_k(65536, n)
        mc[n] = (k, fp_exact(65536, n, k), _monte_carlo(65536, n, k, seed=n))
    mc_ok = all(abs(obs - exp) <= 0.2 * exp for _, exp, obs in mc.values())
    elapsed = time.perf_counter() - t0
    res = dict(agree=agree, optimal=optimal, mc=mc, mc_ok=mc_ok, elapsed=elapsed)
    detail = (f"closed forms agree to {agree:.1e}, 0.6185^(m/n) to {optimal:.1e}; MC "
              + ", ".join(f"n={n}: {obs:.2g} vs {exp:.2g}" for n, (_, exp, obs) in mc.items())
              + f"; {elapsed:.1f}s")
    record_criterion("2", agree < 1e-3 and optimal < 1e-9 and mc_ok and elapsed < 10, detail)
    return res


def test_criterion_2_closed_forms(criterion2):
    assert criterion2["agree"] < 1e-3
    assert criterion2["optimal"] < 1e-9
    assert criterion2["elapsed"] < 10


@pytest.mark.xfail(strict=True, reason="expected FP at m=65536 is below 1e-6; 1e5 probes "
                   "cannot resolve it to +-20% (see decision ledger)")
def test_criterion_2_monte_carlo(criterion2):
    for n, (k, exp, obs) in criterion2["mc"].items():
        assert abs(obs - exp) <= 0.2 * exp, (n, k, exp, obs)


# --------------------------------------------------------------------- 3
@pytest.mark.slow
def test_criterion_3_service_delay_grows_with_mcp():
    delays, worst = {}, 0.0
    for workload in ("basic", "zipf"):
        for mcp in (0.0, 0.1, 0.2, 0.3):
            rep, secs = timed(run, bundled("fig2", consumers__workload=workload,
                                           consumers__mcp=mcp))
            worst = max(worst, secs)
            delays[workload, mcp] = mean_in(rep, "data_service_delay")
    mono = all(delays[w, a] <= delays[w, b]
               for w in ("basic", "zipf") for a, b in [(0.0, 0.1), (0.1, 0.2), (0.2, 0.3)])
    inc = {w: delays[w, 0.3] - delays[w, 0.0] for w in ("basic", "zipf")}
    ok = mono and inc["zipf"] >= inc["basic"] and worst < 120
    record_criterion("3", ok, "; ".join(
        f"{w}: " + " ".join(f"{delays[w, m] * 1e3:.3g}" for m in (0.0, 0.1, 0.2, 0.3)) + " ms"
        for w in ("basic", "zipf")) + f"; slowest run {worst:.0f}s")
    assert mono
    assert inc["zipf"] >= inc["basic"]
    assert worst < 120


# --------------------------------------------------------------------- 4
@pytest.mark.slow
def test_criterion_4_malicious_growth_costs_more():
    out, worst = {}, 0.0
    for kind in ("benign", "malicious"):
        rep, secs = timed(run, bundled("fig3", growth__kind=kind))
        worst = max(worst, secs)
        out[kind] = mean_in(rep, "data_service_delay", 500, 600)
    ratio = out["malicious"] / out["benign"]
    record_criterion("4", ratio >= 1.05 and worst < 180,
                     f"ratio {ratio:.3g} over 500-600 s; slowest run {worst:.0f}s")
    assert ratio >= 1.05
    assert worst < 180


# --------------------------------------------------------------------- 5
@pytest.mark.slow
def test_criterion_5_router_forwarding_unaffected():
    worst = 0.0
    fwd = {}
    for mcp in (0.0, 0.3):
        rep, secs = timed(run, bundled("fig5", consumers__mcp=mcp))
        worst = max(worst, secs)
        fwd[mcp] = mean_in(rep, "forwarding_delay", node="r0")
    growth = {}
    for kind in ("benign", "malicious"):
        rep, secs = timed(run, bundled("fig6", growth__kind=kind))
        worst = max(worst, secs)
        growth[kind] = mean_in(rep, "forwarding_delay", 300, 600, node="r0")
    mcp_change = abs(fwd[0.3] / fwd[0.0] - 1)
    degradation = growth["malicious"] / growth["benign"] - 1
    ok = mcp_change < 0.05 and degradation <= 0.10 and worst < 180
    record_criterion("5", ok, f"30% vs 0% MCP {mcp_change:.2%}; growth degradation "
                     f"{degradation:.2%}; slowest run {worst:.0f}s")
    assert mcp_change < 0.05
    assert degradation <= 0.10
    assert worst < 180


# --------------------------------------------------------------------- 6
def _replay(producer_key):
    cfg = RouterConfig(check_cnack_window=True, cnack_window=60.0)
    b = make_bench(n_down=1, config=cfg)
    d, u = b.downs[0], b.ups[0]
    old = signed("/p/a/9", producer_key, ContentType.CNACK, timestamp=0.0, expiration=1000.0)
    fresh = signed("/p/a/9", producer_key, ContentType.CNACK, timestamp=95.0, expiration=1000.0)
    b.at(100.0, d.send, 0, interest("/p/a/9", producer_key))
    b.at(100.1, u.send, 0, old)  # 100 s old, window 60 s
    b.run(100.5)
    rejected = not d.inbox and b.counter("cnack_replays_rejected") == 1
    b.at(100.5, u.send, 0, fresh)
    b.run(101.0)
    return rejected and d.got(ContentObject) == [fresh]


def _fnack_forgery(producer_key):
    results = []
    for forge in ("tamper", "stale"):
        b = make_bench(ups=2, config=RouterConfig(face_timeout=5.0))
        d, u0 = b.downs[0], b.ups[0]
        key = KeyRegistry(7).link_key("r0", "u0")
        b.at(10.0, d.send, 0, interest("/p/a/1", producer_key))
        b.run(10.05)
        if forge == "tamper":
            bad = replace(mac_fnack(FNack(parse_name("/p/a/1"), NackReason.NO_ROUTE, 10.05), key),
                          reason=NackReason.CONGESTION)
        else:
            bad = mac_fnack(FNack(parse_name("/p/a/1"), NackReason.NO_ROUTE, 0.0), key)
        b.at(10.05, u0.send, 0, bad)
        b.run(10.2)
        entry = b.router.pit.get(parse_name("/p/a/1"))
        face = b.topo.face_towards("r0", "u0")
        results.append(entry is not None and entry.upstream_state[face] is FaceState.AWAITING
                       and b.counter("fnacks_rejected") == 1 and not d.inbox)
    return all(results)


def _ikb(producer_key):
    mallory = KeyPair.generate("mallory")
    b = make_bench(n_down=2)
    d0, d1 = b.downs
    b.at(0.0, d0.send, 0, interest("/p/a/1", producer_key))
    b.run(0.5)
    b.at(0.5, b.ups[0].send, 0, signed("/p/a/1", mallory))
    b.run(0.6)
    # the same name again: nothing was cached, so it must go upstream
    b.at(0.6, d1.send, 0, interest("/p/a/1", producer_key))
    b.run(1.0)
    return (not d0.inbox and not d1.inbox and not b.router.cs
            and b.counter("poisoned_drops") == 1 and b.counter("cs_hits") == 0)


def _prepublished_cnack():
    """consumer - router - producer; a cNACK issued before publication is bounded by E."""
    sim, metrics, keys = Simulator(), Metrics(), KeyRegistry(3)
    key = keys.register_producer(parse_name("/p"), "producer")
    topo = Topology()
    prof = ConsumerProfile(ConsumerKind.BENIGN_BASIC, rate=1, retx_limit=0)
    c = topo.add(Consumer("c0", prof, node_rng(3, "c0"), key.digest, keys))
    from icnack.router import Router
    topo.add(Router("r0", RouterConfig(), keys))
    prod = topo.add(Producer("p0", Catalog.from_pattern("/p", 10), key,
                             CnackPolicy(interval=1.0, expiration_horizon=5.0, freshness=60.0),
                             ServiceModel(0.001, 0.0001)))
    topo.connect("c0", "r0", 0.01)
    topo.connect("r0", "p0", 0.01)
    for n in topo.nodes.values():
        n.bind(sim, metrics)
    topo.nodes["r0"].add_route("/p", [topo.face_towards("r0", "p0")])
    name = parse_name("/p/a/11")  # plausible: next index after the 10 published
    ask = lambda: c.emit(Interest(name, key_digest=key.digest))
    sim.schedule(1.0, c, ask)                      # cNACK at t=1, expiration E = 1 + 5
    sim.schedule(2.0, prod, prod.publish, name, 2.0)
    sim.schedule(3.0, c, ask)                      # before E: still the cNACK
    sim.schedule(6.0, c, ask)                      # at E: no longer served
    sim.run(7.0)
    rep = metrics.report()
    cached_before = rep.total("cnacks_served", node="r0", t0=2.9, t1=3.1) == 1
    return (cached_before and rep.total("not_found", node="c0") == 2
            and rep.total("data_received", node="c0", t0=6.0) == 1)


def test_criterion_6_security_suite(producer_key):
    t0 = time.perf_counter()
    parts = {"a replay": _replay(producer_key), "b fNACK forgery": _fnack_forgery(producer_key),
             "c IKB": _ikb(producer_key), "d pre-published cNACK": _prepublished_cnack()}
    elapsed = time.perf_counter() - t0
    ok = all(parts.values()) and elapsed < 10
    record_criterion("6", ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in parts.items())
                     + f"; {elapsed:.2f}s")
    assert all(parts.values()), parts
    assert elapsed < 10


# --------------------------------------------------------------------- 7
@pytest.mark.slow
def test_criterion_7_mitigation():
    t0 = time.perf_counter()
    window = (20, 120)
    base = run(bundled("mitigation", consumers__mcp=0.0, producer__bloom_trigger="off"))
    attack = run(bundled("mitigation", producer__bloom_trigger="off"))
    net = Network(bundled("mitigation"))
    screened = net.run()
    prod = screened.nodes["p0"]
    flt = prod.current_filter(parse_name("/p/a/1"), screened.sim.now)
    fp = fp_exact(flt.params.m, flt.params.n, flt.params.k)
    reaching_off = attack.total("unpublished_requests", t0=window[0], t1=window[1])
    reaching_on = screened.report.total("unpublished_requests", t0=window[0], t1=window[1])
    reduction = 1 - reaching_on / reaching_off
    d_base = mean_in(base, "data_service_delay", *window)
    d_on = mean_in(screened.report, "data_service_delay", *window)
    gw_base = run(bundled("mitigation", consumers__mcp=0.0, producer__bloom_trigger="off",
                          producer__gateway="true"))
    gw_attack = run(bundled("mitigation", producer__bloom_trigger="off",
                            producer__gateway="true"))
    r_base = mean_in(gw_base, "repo_delay", *window)
    r_attack = mean_in(gw_attack, "repo_delay", *window)
    elapsed = time.perf_counter() - t0
    checks = {
        "reduction": reduction >= 1 - 2 * fp,
        "delay": abs(d_on / d_base - 1) <= 0.10,
        "gateway": abs(r_attack / r_base - 1) <= 0.10,
        "budget": elapsed < 120,
    }
    record_criterion("7", all(checks.values()),
                     f"reduction {reduction:.4f} (need {1 - 2 * fp:.4f}), delay ratio "
                     f"{d_on / d_base:.3f} (attack unscreened "
                     f"{mean_in(attack, 'data_service_delay', *window) / d_base:.0f}x), "
                     f"gateway repo ratio {r_attack / r_base:.3f}; {elapsed:.0f}s")
    assert checks["reduction"], (reduction, fp)
    assert checks["delay"], (d_on, d_base)
    assert checks["gateway"], (r_attack, r_base)
    assert checks["budget"], elapsed


# --------------------------------------------------------------------- 8
def test_criterion_8_determinism():
    same = {}
    for name in BUNDLED:
        sc = bundled(name, run__duration=15)
        same[name] = run(sc, 5).to_csv() == run(sc, 5).to_csv()
    ok = all(same.values())
    record_criterion("8", ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}"
                                        for k, v in same.items()))
    assert ok, same
