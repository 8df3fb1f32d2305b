"""
Memorizing one training pair
============================

A working loss and backward pass should let the network memorize a single
(template, search, box) triple.  The total loss should fall below 0.05 and
the top-scoring location should decode to the true box.
"""

# %%
from tinytrack.boxes import iou
from tinytrack.config import overfit_config
from tinytrack.train import decoded_argmax_box, train

cfg = overfit_config()


def show(row):
    if row["step"] % 50 == 0 or row["step"] == cfg.train.steps - 1:
        print(f"step {row['step']:4d}  total {row['total']:.4f}  "
              f"cls {row['cls_loss']:.4f}  reg {row['reg_loss']:.4f}  lr {row['lr']:.1e}")


res = train(cfg, progress=show)

# %% [markdown]
# The classification target is the IoU of each positive's own box, so the loss
# first rises while the boxes improve, then falls.

# %%
batch = res.fixed_batch
pred = decoded_argmax_box(res.model, batch)
print("ground truth:", batch.boxes[0])
print("prediction:  ", pred)
print("IoU:", round(iou(pred, batch.boxes[0]), 4))
