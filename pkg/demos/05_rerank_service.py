#!/usr/bin/env python3
"""Serve facet-weighted reranking over HTTP and steer it with alpha.

Starts the server on an ephemeral port with the checkpoints from demo 03,
reranks one pool at alpha 1.0 / 0.5 / 0.0, and prints how the fused order
shifts from pure background similarity to pure method similarity.
"""

import json
import threading
import urllib.request
from pathlib import Path

from facetrank.server import RerankService, make_server
from facetrank.synth import SynthConfig, generate_corpus, make_probes

ARTIFACTS = Path(__file__).parent / "_artifacts"
for name in ("bg", "mt"):
    if not (ARTIFACTS / f"ckpt_{name}").exists():
        raise SystemExit(f"missing {ARTIFACTS / f'ckpt_{name}'}; run demos/03_train_facet_models.py first")

service = RerankService.from_checkpoints(ARTIFACTS / "ckpt_bg", ARTIFACTS / "ckpt_mt", pool_cap=50)
server = make_server(service, port=0)
port = server.server_address[1]
threading.Thread(target=server.serve_forever, daemon=True).start()
print(f"serving on 127.0.0.1:{port}")

with urllib.request.urlopen(f"http://127.0.0.1:{port}/health") as r:
    print("health:", json.loads(r.read())["ready"])

# a probe seed plus contrast candidates: one shares its topic, one its method
cfg = SynthConfig(n_docs=200, n_seeds=200, pool_size=12, rng_seed=7)
probe = make_probes(cfg, 1)[0]
extra = generate_corpus(SynthConfig(n_docs=6, n_seeds=1, pool_size=3, rng_seed=99, id_prefix="x")).docs
candidates = [
    {"candidate_id": "same-topic", "title": probe.same_topic.title, "abstract": probe.same_topic.abstract},
    {"candidate_id": "same-method", "title": probe.same_method.title, "abstract": probe.same_method.abstract},
] + [
    {"candidate_id": f"random-{i}", "title": d.paper.title, "abstract": d.paper.abstract}
    for i, d in enumerate(extra[:3])
]

for alpha in (1.0, 0.5, 0.0):
    body = json.dumps({
        "seed": {"title": probe.seed.title, "abstract": probe.seed.abstract},
        "candidates": candidates,
        "alpha": alpha,
    }).encode()
    req = urllib.request.Request(f"http://127.0.0.1:{port}/rerank", data=body,
                                 headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(req) as r:
        resp = json.loads(r.read())
    print(f"\nalpha={alpha} (1.0 = pure background weighting)")
    print("  fused order:", resp["rankings"]["fused"])
    for c in sorted(resp["candidates"], key=lambda c: -c["fused"])[:3]:
        print(f"    {c['candidate_id']:12s} bg_norm={c['bg_norm']:.2f} mt_norm={c['mt_norm']:.2f} "
              f"fused={c['fused']:.2f}")

server.shutdown()
server.server_close()
print("\nserver stopped")
