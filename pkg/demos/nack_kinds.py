"""What a consumer sees for published, unpublished and unroutable names.

One consumer, one router, one producer serving /p. The consumer asks for
a published name (signed DATA), a plausible but unpublished one (a signed
cNACK from the producer) and a name under /q that no router can route (an
HMAC-authenticated fNACK from the first hop).
"""
import numpy as np

from icnack import (Catalog, Consumer, ConsumerKind, ConsumerProfile, Interest, KeyRegistry,
                    Metrics, Producer, Router, RouterConfig, Simulator, Topology, parse_name)

sim, metrics, keys = Simulator(), Metrics(), KeyRegistry(1)
key = keys.register_producer(parse_name("/p"), "producer")

topo = Topology()
consumer = topo.add(Consumer("c0", ConsumerProfile(ConsumerKind.BENIGN_BASIC, retx_limit=0),
                             np.random.default_rng(0), key.digest, keys))
router = topo.add(Router("r0", RouterConfig(), keys))
topo.add(Producer("p0", Catalog.from_pattern("/p", 100), key))
topo.connect("c0", "r0", 0.010)
topo.connect("r0", "p0", 0.010)
for node in topo.nodes.values():
    node.bind(sim, metrics)
router.add_route("/p", [topo.face_towards("r0", "p0")])

for t, name in [(0.0, "/p/a/7"), (0.1, "/p/a/123"), (0.2, "/q/anything")]:
    sim.schedule(t, consumer, consumer.emit, Interest(parse_name(name), key_digest=key.digest))
sim.run(5.0)

report = metrics.report()
print("published   /p/a/7     -> DATA, rtt %.1f ms" % (consumer.rtts[0] * 1e3))
print("unpublished /p/a/123   -> cNACK (not_found=%d)" % report.total("not_found"))
print("unroutable  /q/anything -> fNACK (unreachable=%d)" % report.total("unreachable"))
print("producer signatures spent:", report.total("signatures", node="p0"))
