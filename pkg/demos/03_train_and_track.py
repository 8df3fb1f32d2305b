"""
Training on synthetic sequences and tracking held-out ones
==========================================================

Train the toy model on seeded synthetic video, then track 20 unseen
sequences and compare against a box that never moves.  Pass a step count to
shorten the run (the default 3000 steps takes a few minutes on one core).
"""

# %%
import sys

from tinytrack.config import TrackConfig, toy_config
from tinytrack.train import evaluate_model, static_baseline, test_corpus, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
cfg = toy_config(train__steps=steps)
every = max(1, steps // 10)
res = train(cfg, progress=lambda r: print(f"step {r['step']:5d}  loss {r['total']:.4f}")
            if r["step"] % every == 0 else None)

# %%
seqs = test_corpus(cfg)
report = evaluate_model(res.model, seqs, cfg.track)
print(report.table())
print("static box SUC:", round(static_baseline(seqs).suc, 3))

# %% [markdown]
# The window penalty leans on the prior that targets move smoothly.  Turning
# it off (gamma = 0) usually costs a little.

# %%
for gamma in (0.0, 0.25, cfg.track.gamma, 0.75):
    suc = evaluate_model(res.model, seqs, TrackConfig(gamma=gamma)).suc
    print(f"gamma {gamma:.2f}  SUC {suc:.3f}")
