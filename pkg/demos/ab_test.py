"""Static versus dynamic layout on a few synthetic worlds, then a w sweep.

Lower w puts more weight on discovery, so users touch more categories
they had never bought from.
"""

import sys

from crank.simharness import WorldConfig, compare, generate_world, simulate, train_world

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
sessions = 3000

for seed in seeds:
    world = generate_world(WorldConfig(), seed=seed)
    model = train_world(world)
    a = simulate(world, "static", sessions, seed=seed)
    b = simulate(world, "dynamic", sessions, seed=seed, model=model)
    lift = compare(a, b)
    print(
        f"seed {seed}: atc/visit {a.atc_per_visit:.3f} -> {b.atc_per_visit:.3f} "
        f"({lift['atc_per_visit']:+.1f}%), p99 {b.p99_compute_micros:.0f}us"
    )

print("\nw    new categories per visit")
for w in (0.9, 0.5, 0.1):
    vals = []
    for seed in seeds:
        world = generate_world(WorldConfig(), seed=seed)
        vals.append(simulate(world, "dynamic", sessions, seed=seed, w=w, model=train_world(world)).distinct_new_categories_touched)
    print(f"{w:.1f}  {sum(vals) / len(vals):.4f}")
