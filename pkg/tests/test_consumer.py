import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import Probe, signed
from icnack.consumer import Consumer, ConsumerKind, ConsumerProfile, Workload, zipf_cdf
from icnack.crypto import KeyPair, KeyRegistry, mac_fnack
from icnack.engine import Metrics, Simulator, Topology
from icnack.packets import ContentObject, ContentType, FNack, Interest, NackReason, parse_name
from icnack.producer import Catalog, default_plausibility

KEY = KeyPair.generate("consumer-tests")
H_1000 = 7.485470860550344912656518204333900176522  # harmonic number, 40-digit mpmath


def rig(profile, reply=None, delay=0.015, seed=0):
    sim, metrics = Simulator(), Metrics()
    topo = Topology()
    c = topo.add(Consumer("c0", profile, np.random.default_rng(seed), KEY.digest,
                          keys=KeyRegistry(7)))
    r = topo.add(Probe("r0", "router", reply))
    topo.connect("c0", "r0", delay)
    c.bind(sim, metrics)
    r.bind(sim, metrics)
    return sim, metrics, c, r


def test_basic_sequence_and_spacing():
    prof = ConsumerProfile(ConsumerKind.BENIGN_BASIC, rate=10, start_offset=1)
    sim, _, c, r = rig(prof)
    c.start(0.0, phase=0.0)
    sim.run(0.95)
    names = [str(p.name) for _, p, _ in r.inbox]
    assert names[:3] == ["/p/a/1", "/p/a/2", "/p/a/3"]
    gaps = np.diff([t for t, _, _ in r.inbox])
    assert np.allclose(gaps, 0.1, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 200), st.sampled_from(list(ConsumerKind)))
def test_spacing_is_exactly_one_over_rate(rate, kind):
    sim, _, c, r = rig(ConsumerProfile(kind, rate=rate, retx_limit=0))
    c.start(0.0)
    sim.run(0.015 + 20.5 / rate)
    sends = np.array([t for t, _, _ in r.inbox])
    assert len(sends) >= 19
    assert np.allclose(np.diff(sends), 1 / rate, rtol=1e-9, atol=1e-9)


def test_zipf_rank_one_frequency():
    wl = Workload(ConsumerProfile(ConsumerKind.BENIGN_ZIPF, catalog_size=1000),
                  np.random.default_rng(3))
    draws = np.array([wl.draw_rank() for _ in range(100_000)])
    p1 = 1 / H_1000
    sigma = np.sqrt(p1 * (1 - p1) / len(draws))
    assert abs(np.mean(draws == 1) - p1) <= 3 * sigma


def test_zipf_chi_square():
    wl = Workload(ConsumerProfile(ConsumerKind.BENIGN_ZIPF, catalog_size=50, zipf_alpha=1.2),
                  np.random.default_rng(5))
    counts = np.bincount([wl.draw_rank() for _ in range(50_000)], minlength=51)[1:]
    w = np.arange(1, 51, dtype=float) ** -1.2
    expected = w / w.sum() * counts.sum()
    assert stats.chisquare(counts, expected).pvalue > 0.001


def test_zipf_cdf_ends_at_one():
    cdf = zipf_cdf(10, 1.0)
    assert cdf[-1] == pytest.approx(1.0) and all(a < b for a, b in zip(cdf, cdf[1:]))


@pytest.mark.parametrize("plausible", [True, False])
def test_malicious_names_never_published(plausible):
    cat = Catalog.from_pattern("/p", 1000)
    wl = Workload(ConsumerProfile(ConsumerKind.MALICIOUS, plausible=plausible, suffix_len=1),
                  np.random.default_rng(1), KEY.digest)
    for _ in range(2000):
        i = wl.next_interest()
        assert i.name not in cat and i.key_digest == KEY.digest
        assert default_plausibility(i.name, cat) == plausible


def reply_with(kind):
    def reply(probe, pkt, face):
        if kind == "data":
            probe.send(face, signed(pkt.name, KEY))
        elif kind == "cnack":
            probe.send(face, signed(pkt.name, KEY, ContentType.CNACK, timestamp=probe.sim.now))
        elif kind == "fnack":
            k = KeyRegistry(7).link_key("c0", "r0")
            probe.send(face, mac_fnack(FNack(pkt.name, NackReason.NO_ROUTE, probe.sim.now), k))
        elif kind == "badfnack":
            probe.send(face, FNack(pkt.name, NackReason.NO_ROUTE, probe.sim.now, b"x" * 32))
    return reply


def one_shot(kind, retx=3):
    prof = ConsumerProfile(ConsumerKind.BENIGN_BASIC, rate=1, retx_limit=retx, start_offset=1)
    sim, metrics, c, r = rig(prof, reply_with(kind))
    sim.schedule(0.0, c, c.emit, Interest(parse_name("/p/a/1"), KEY.digest))
    sim.run()
    return metrics.report(), c, r


def test_data_records_rtt():
    rep, c, _ = one_shot("data")
    assert c.rtts == [pytest.approx(0.030)]
    assert rep.mean("rtt") == pytest.approx(0.030)


def test_cnack_means_no_retransmission():
    rep, c, r = one_shot("cnack")
    assert len(r.inbox) == 1 and rep.total("not_found") == 1
    assert not c.retransmissions and not c.outstanding


def test_timeout_retransmits_up_to_limit():
    rep, c, r = one_shot("silent", retx=2)
    assert len(r.inbox) == 3
    assert c.retransmissions == {parse_name("/p/a/1"): 2}
    assert rep.total("abandoned") == 1 and not c.outstanding


def test_fnack_marks_unreachable():
    rep, c, r = one_shot("fnack")
    assert rep.total("unreachable") == 1 and len(r.inbox) == 1


def test_forged_fnack_ignored():
    rep, c, r = one_shot("badfnack", retx=0)
    assert rep.total("fnacks_rejected") == 1 and rep.total("abandoned") == 1


def test_unknown_response_counted():
    prof = ConsumerProfile(ConsumerKind.BENIGN_BASIC)
    sim, metrics, c, r = rig(prof)
    sim.schedule(0.0, r, r.send, 0, signed("/p/zzz", KEY))
    sim.run()
    assert metrics.report().total("unknown_responses") == 1


def test_profile_validation():
    with pytest.raises(ValueError):
        ConsumerProfile(ConsumerKind.BENIGN_BASIC, rate=0)
    with pytest.raises(ValueError):
        ConsumerProfile(ConsumerKind.BENIGN_ZIPF, zipf_alpha=0)
