"""Freeze golden vectors for the hash text stub from an independent implementation.

Recipe: state = fnv1a64(utf8 prompt) ^ seed; repeatedly draw normals with the
SplitMix64 Box-Muller generator (cosine branch, u1 redrawn while <= 0); L2-normalize.
"""
import json
import math
import sys

MASK = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK
    return h


class SplitMix:
    def __init__(self, state: int):
        self.state = state & MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next() >> 11) * 2.0**-53

    def normal(self) -> float:
        u1 = self.uniform()
        while u1 <= 0.0:
            u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def embed(prompt: str, dim: int, seed: int) -> list[float]:
    rng = SplitMix(fnv1a64(prompt.encode()) ^ seed)
    v = [rng.normal() for _ in range(dim)]
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


PROMPTS = [
    "A photo of a person ride a horse",
    "A photo of an umbrella",
    "A photo of a person no interaction a dining table",
    "A photo of a person hold a cup",
    "x",
]

if __name__ == "__main__":
    dim, seed = 16, 12345
    doc = {"dim": dim, "seed": seed, "embeddings": {p: embed(p, dim, seed) for p in PROMPTS}}
    out = sys.argv[1] if len(sys.argv) > 1 else "tests/data/hash_text_golden.json"
    with open(out, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
