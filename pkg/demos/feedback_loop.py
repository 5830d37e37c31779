"""Watch a carousel climb as a user keeps clicking it.

Every posted event lands in the append-only log; each tick folds the new
records into the live Beta priors, so the next rank call already sees them.
"""

import tempfile

from crank.service import Engine, RankRequest
from crank.simharness import WorldConfig, generate_world, train_world

world = generate_world(WorldConfig(n_users=100), seed=3)
engine = Engine.from_model(train_world(world), tempfile.mkdtemp(), persist=False)
user = world.users[4]
req = RankRequest(user, list(world.carousels), len(world.carousels))

first = engine.rank(req)
# the lowest-ranked carousel the user has some affinity for
target = [k for k in first["ranking"] if first["scores"][k]["alpha"] > 0][-1]
item = next(c.items[0] for c in world.carousels if c.id == target)
print(f"{user} starts with {target} in zone {first['ranking'].index(target) + 1}")

ts = 2_000_000_000
for visit in range(1, 9):
    ts += 3600  # one visit per hour, so each is its own session
    engine.handle_events([
        {"ts": ts, "user": user, "carousel": target, "event": "view"},
        {"ts": ts + 5, "user": user, "carousel": target, "item": item, "event": "click"},
    ])
    engine.tick()
    out = engine.rank(req)
    s = out["scores"][target]
    print(f"visit {visit}: zone {out['ranking'].index(target) + 1:2d}  lambda={s['lambda']:.3f}  phi={s['phi']:+.4f}")
engine.stop()
