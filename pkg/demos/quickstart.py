"""Train on a synthetic world and rank one user's homepage.

    python demos/quickstart.py
"""

from crank.service import Engine, RankRequest
from crank.simharness import WorldConfig, generate_world, train_world

world = generate_world(WorldConfig(n_users=100), seed=0)
model = train_world(world)
print(f"{len(world.history)} history events, {len(world.items)} items, {len(world.carousels)} carousels")

engine = Engine.from_model(model, "/tmp/crank-quickstart", persist=False)
user = world.users[0]
out = engine.rank(RankRequest(user, list(world.carousels), 5))

print(f"\nzones for {user} ({out['compute_micros']:.0f}us):")
for zone, k in enumerate(out["ranking"], 1):
    s = out["scores"][k]
    print(f"  {zone}. {k:4s} phi={s['phi']:+.4f} alpha={s['alpha']:+.4f} gamma={s['gamma']:.4f} lambda={s['lambda']:.3f}")
engine.stop()
