"""Independent oracle for candidate assignment on the 10 x 100 fixture.

Regenerates tests/fixtures/matching/{vocab,corpus,expected}.jsonl. Similarities
are exact float64 cosines of hashed character-trigram count vectors; the
assignment is an exhaustive scan (top-k captions per entity, then the best
entity per caption, ties to the lower entity id).
"""
import json
import math
import random
from pathlib import Path

DIM = 256
K = 5
OUT = Path(__file__).resolve().parent.parent / "fixtures" / "matching"

ENTITIES = [
    "golden gate bridge", "tower bridge", "grosgrain", "bronte baths",
    "boeing 707", "red panda", "eiffel tower", "mount fuji",
    "venus flytrap", "sydney opera house",
]
FILLER = ["photo of", "a view of", "near the", "sunset over", "my trip",
          "close up", "old postcard", "the famous", "tourists at", "blurry"]


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def embed(text: str) -> list:
    chars = "##" + text + "##"
    v = [0.0] * DIM
    for i in range(len(chars) - 2):
        v[fnv1a64(chars[i:i + 3].encode("utf-8")) % DIM] += 1.0
    return v


def cosine(a, b):
    return sum(x * y for x, y in zip(a, b)) / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))


def main():
    rng = random.Random(20240611)
    captions = []
    for i in range(100):
        words = rng.sample(FILLER, 2)
        if rng.random() < 0.8:
            words.insert(rng.randrange(3), rng.choice(ENTITIES))
        captions.append(" ".join(words))

    ent_vecs = [embed(e) for e in ENTITIES]
    cap_vecs = [embed(c) for c in captions]
    best = {}
    for eid, ev in enumerate(ent_vecs):
        sims = sorted(((-cosine(ev, cv), ci) for ci, cv in enumerate(cap_vecs)))[:K]
        for neg, ci in sims:
            s = -neg
            cur = best.get(ci)
            if cur is None or s > cur[0] or (s == cur[0] and eid < cur[1]):
                best[ci] = (s, eid)

    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "vocab.jsonl", "w") as f:
        for e in ENTITIES:
            f.write(json.dumps({"name": e}) + "\n")
    with open(OUT / "corpus.jsonl", "w") as f:
        for i, c in enumerate(captions):
            f.write(json.dumps({"image_id": f"c{i:03d}", "caption": c}) + "\n")
    with open(OUT / "expected.jsonl", "w") as f:
        for ci in sorted(best):
            s, eid = best[ci]
            f.write(json.dumps({"image_id": f"c{ci:03d}", "candidate_entity_id": eid, "similarity": s}) + "\n")


if __name__ == "__main__":
    main()
