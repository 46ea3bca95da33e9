"""Relay-network connection sets for the four-bus fixture.

Run: python3 demos/01_topology.py
"""

from collections import Counter

from cpgrid import bandwidth_filter, complete_sets, enumerate_paths, load_fixture, mask_from_set

net, cs, meta = load_fixture("ch2_network")
paths = enumerate_paths(net, cs)
kept = bandwidth_filter(paths, cs)
print(f"{len(paths)} sensor-to-controller paths, {len(kept)} after the bandwidth filter")

sets = complete_sets(kept, net, cs, "reliability")
print(f"{len(sets)} complete connection sets under the reliability objective")
for s in sets[:5]:
    print(f"  {s.label:>8}  {' '.join(''.join(map(str, p)) for p in s.paths)}")

# many sets collapse onto the same sensor-controller mask
masks = Counter(mask_from_set(s) for s in sets)
print(f"{len(masks)} distinct masks; most shared mask (controller x sensor):")
mask, count = masks.most_common(1)[0]
print(mask.allowed.astype(int), f"used by {count} sets")
