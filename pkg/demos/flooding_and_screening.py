"""Interest flooding against a producer, with and without Bloom screening.

30% of 200 consumers ask for names that do not exist. Each one costs the
producer a cNACK signature, so benign requests queue behind them. Once the
producer's signing load crosses a threshold it publishes a Bloom filter of
its catalog; the edge router then drops interests for names outside it.
The run is shortened to 60 s.
"""
from icnack import Scenario, bundled_path, mean_in, run


def point(label, **overrides):
    sc = Scenario.load(bundled_path("mitigation"), {"run.duration": "60", **overrides})
    rep = run(sc)
    delay = mean_in(rep, "data_service_delay", 20, 60)
    bogus = rep.total("unpublished_requests", t0=20, t1=60)
    print(f"{label:<28} service delay {delay * 1e3:8.3f} ms   "
          f"attack interests at producer {bogus:7.0f}")


point("no attack", **{"consumers.mcp": "0", "producer.bloom_trigger": "off"})
point("attack, no screening", **{"producer.bloom_trigger": "off"})
point("attack, Bloom screening", **{"producer.bloom_trigger": "load"})
