"""Turn one synthetic image into a stack of quantum patch channels.

Run with ``python demos/quantum_patches.py``.
"""

import numpy as np

from qpatch import circuits, data, quanv
from qpatch.circuits import RqcSpec


def show(name, img):
    chars = " .:-=+*#%@"
    lo, hi = img.min(), img.max()
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    print(name)
    for row in scaled:
        print("  " + "".join(chars[int(v * (len(chars) - 1))] * 2 for v in row))


ds = data.gen_plus_minus(4, seed=1)
image = ds.images[0]
show(f"input ({ds.class_names[ds.labels[0]]}, 16x16)", image)

rqc = RqcSpec(seed=7, n_qubits=4, depth=4)
print("random circuit:")
print(circuits.to_text(circuits.build_rqc(rqc)))

stack = quanv.quanv_transform(image, rqc)
show("pooled original (8x8)", stack.original)
for j, ch in enumerate(stack.quantum):
    show(f"quantum channel {j}: <Z_{j}> in [{ch.min():+.2f}, {ch.max():+.2f}]", ch)

features = quanv.flatten_features(stack)
print("classifier input:", features.shape[0], "features in [0, 1]")

# With no random layers each channel is just cos(pi * pixel).
bare = quanv.quanv_transform(image, RqcSpec(seed=7, depth=0))
patches = quanv.extract_patches(image).reshape(8, 8, 4)
print("depth-0 check:", float(np.max(np.abs(bare.quantum[0] - np.cos(np.pi * patches[..., 0])))))
