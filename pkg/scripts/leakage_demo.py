"""Contrast a leaky and a leak-free synthetic universe.

Both universes share documents, outcomes and predictions. In the leaky one the
evaluation sampler over-weights documents the model trained on; in the clean
one it keeps the ambient membership rate.
"""

import argparse
import json

import numpy as np

from chrono_eval.leakage import LeakageUniverse, UniverseDoc, simulate


def build(n_docs: int, seed: int, leaky: bool) -> LeakageUniverse:
    rng = np.random.default_rng(seed)
    docs, pred, amb, ev = [], {}, {}, {}
    for i in range(n_docs):
        member = bool(rng.random() < 0.3)
        doc = UniverseDoc(f"doc{i:03d}", 2001 + i % 10, float(rng.normal()), in_pretrain=member)
        docs.append(doc)
        # trained-on docs are predicted well, the rest poorly
        noise = 0.1 if member else 1.0
        pred[doc.doc_id] = doc.outcome + float(rng.normal(scale=noise))
        amb[doc.doc_id] = 1.0
        ev[doc.doc_id] = (4.0 if member else 1.0) if leaky else 1.0
    return LeakageUniverse(docs, 2000, ev, pred, ambient_weights=amb)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=60)
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for leaky in (True, False):
        rep = simulate(build(args.docs, args.seed, leaky), args.samples, args.seed)
        summary = {k: v for k, v in rep.to_json().items() if k != "terms"}
        print("leaky" if leaky else "clean", json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
