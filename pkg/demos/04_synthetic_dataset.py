"""The synthetic segmentation task: three strictly nested deformed
ellipsoids rendered into four contrast channels.

Labels 3 (inner) sit inside 2 (middle) inside 1 (outer); the evaluation
regions are the nested unions whole = {1,2,3}, core = {2,3},
inner = {3}. Writes a slice montage to demo_dataset.png if matplotlib is
available.
"""

import numpy as np

from fnoseg import data

spec = data.SyntheticSpec(grid=(48, 48, 48), num_samples=3, num_test=1, noise=0.08)
sample = data.make_sample(spec, seed=11, index=0)

print(f"sample {sample.sample_id}: image {sample.image.shape} {sample.image.dtype}, labels {sample.labels.shape}")
counts = np.bincount(sample.labels.reshape(-1), minlength=4)
for label, count in enumerate(counts):
    print(f"  label {label}: {count:6d} voxels")

masks = data.region_masks(sample.labels)
print("nesting check:",
      "inner<=core", bool(np.all(masks['inner'] <= masks['core'])),
      "| core<=whole", bool(np.all(masks['core'] <= masks['whole'])))

mid = sample.labels.shape[2] // 2
try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 5, figsize=(15, 3.2))
    for ch in range(4):
        axes[ch].imshow(sample.image[ch, :, :, mid].T, origin="lower", cmap="gray")
        axes[ch].set_title(f"channel {ch}")
        axes[ch].axis("off")
    axes[4].imshow(sample.labels[:, :, mid].T, origin="lower", cmap="viridis", vmin=0, vmax=3)
    axes[4].set_title("labels")
    axes[4].axis("off")
    fig.tight_layout()
    fig.savefig("demo_dataset.png", dpi=110)
    print("wrote demo_dataset.png (axial mid-slice of each channel + labels)")
except ImportError:
    print("matplotlib not installed; skipping the montage "
          "(pip install 'fnoseg[demos]' to enable)")
