"""Dice, HD95 and the composite loss on synthetic blob volumes."""
import numpy as np

from mlrupp.metrics import dsc, hd95, make_blob_task, metrics_report, seg_loss

vol, labels = make_blob_task((32, 32, 16), num_classes=3, seed=0)
print("volume", vol.shape, "class voxels", np.bincount(labels.ravel()))

# shift the prediction by one voxel along the first axis
pred = np.roll(labels, 1, axis=0)
for row in metrics_report(labels, pred, 3):
    print(row)

y = np.zeros((8, 8, 8), int)
p = np.zeros_like(y)
y[1, 1, 1] = 1
p[1, 1, 4] = 1
print("single voxels three apart: dsc", dsc(y, p), "hd95", hd95(y, p))

onehot = np.stack([(labels == c).astype(float) for c in range(3)])
print("loss, perfect prediction:", seg_loss(onehot, onehot))
print("loss, uniform prediction:", round(seg_loss(onehot, np.full_like(onehot, 1 / 3)), 4))
