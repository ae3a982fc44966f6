#!/usr/bin/env python3
"""Build data/hico_det/label_space.json from the static HICO-DET tables shipped
with the GEN-VLKT code base (PyPI: mmkg-mm-hoi-detection).

The tables provide verb/object names, the 600 (verb, object) pairs, the 138
rare HOI ids, the non-rare ids ordered by descending frequency (first 120),
the rare-first ordering (first 120) and the benchmark's unseen-verb and
unseen-object HOI lists.  Per-HOI training counts are not shipped, so the
emitted train_counts are rank-consistent surrogates:

  * rare-first order i in [0,120)   -> 1 + 7*i//120       (1..7)
  * remaining 18 rare HOIs          -> 8 or 9
  * non-rare top-120, rank j        -> 10 + 342 + (120 - j)  (strictly descending)
  * other non-rare HOIs             -> 10 + k, k by ascending id (10..351)

Under these counts: |{count < 10}| = 138, the 120 lowest counts are exactly the
published rare-first set, the 120 highest exactly the non-rare-first set.
"""
import json
import sys

sys.path.insert(0, sys.argv[1] if len(sys.argv) > 1 else ".")
import static_hico as s  # noqa: E402
import hico_text_label as t  # noqa: E402


def norm(x):
    return x.replace(" ", "_")


verbs = [norm(v) for v in s.ACT_IDX_TO_ACT_NAME]
objects = [norm(o) for o in s.OBJ_IDX_TO_OBJ_NAME]
vid = {v: i for i, v in enumerate(verbs)}
oid = {o: i for i, o in enumerate(objects)}
hois = [[vid[norm(h["action"])], oid[norm(h["object"])]] for h in s.HICO_INTERACTIONS]
assert len(hois) == 600 and len({tuple(h) for h in hois}) == 600

u = t.hico_unseen_index
rare = set(s.RARE_HOI_IDX)
counts = [None] * 600
for i, h in enumerate(u["rare_first"]):
    counts[h] = 1 + 7 * i // 120
rest_rare = sorted(rare - set(u["rare_first"]))
for k, h in enumerate(rest_rare):
    counts[h] = 8 + (k % 2)
for j, h in enumerate(u["non_rare_first"]):
    counts[h] = 10 + 342 + (120 - j)
k = 0
for h in range(600):
    if counts[h] is None:
        counts[h] = 10 + k
        k += 1
assert sum(c < 10 for c in counts) == 138

uv_verbs = sorted({hois[i][0] for i in u["unseen_verb"]})
uo_objects = sorted({hois[i][1] for i in u["unseen_object"]})
assert len(uv_verbs) == 20 and len(uo_objects) == 12

doc = {
    "name": "hico-det",
    "verbs": verbs,
    "objects": objects,
    "hois": hois,
    "train_counts": counts,
    "rare_threshold": 10,
    "train_counts_note": "rank-consistent surrogate counts; see scripts/make_hico_label_space.py",
    "protocol_sets": {"UV": {"verbs": uv_verbs}, "UO": {"objects": uo_objects}},
    "reference_unseen": {
        "RF_UC": sorted(u["rare_first"]),
        "NF_UC": sorted(u["non_rare_first"]),
        "UV": sorted(u["unseen_verb"]),
        "UO": sorted(u["unseen_object"]),
    },
}
json.dump(doc, sys.stdout, separators=(",", ":"))
