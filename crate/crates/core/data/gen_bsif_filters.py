"""Learn the 3x3, 8-filter ICA texture bank used by the BSIF extractor.

Patches are sampled from the natural images bundled with scikit-image,
DC-removed, PCA-whitened down to 8 dimensions and unmixed with FastICA.
Output: one filter per line, 9 coefficients in row-major order.
"""
import hashlib
import sys

import numpy as np
import skimage.data as data
from skimage.color import rgb2gray
from sklearn.decomposition import FastICA

SIZE = 3
N_FILTERS = 8
N_PATCHES = 50000
SEED = 20200413

images = ["astronaut", "camera", "coffee", "chelsea", "rocket", "brick", "grass", "gravel"]
rng = np.random.default_rng(SEED)
per_image = N_PATCHES // len(images)
patches = []
for name in images:
    im = getattr(data, name)()
    if im.ndim == 3:
        im = rgb2gray(im)
    else:
        im = im.astype(np.float64) / 255.0
    h, w = im.shape
    ys = rng.integers(0, h - SIZE, per_image)
    xs = rng.integers(0, w - SIZE, per_image)
    for y, x in zip(ys, xs):
        patches.append(im[y:y + SIZE, x:x + SIZE].ravel())
X = np.asarray(patches)
X = X - X.mean(axis=1, keepdims=True)

cov = np.cov(X, rowvar=False)
evals, evecs = np.linalg.eigh(cov)
order = np.argsort(evals)[::-1][:N_FILTERS]
whiten = (evecs[:, order] / np.sqrt(evals[order])).T  # 8 x 9
Z = X @ whiten.T

ica = FastICA(n_components=N_FILTERS, whiten=False, fun="logcosh", random_state=SEED, max_iter=2000, tol=1e-8)
ica.fit(Z)
filters = ica.components_ @ whiten  # 8 x 9, pixel space

for i in range(N_FILTERS):
    f = filters[i]
    if f[np.argmax(np.abs(f))] < 0:
        filters[i] = -f
filters = filters[np.lexsort(filters.T[::-1])]

lines = [" ".join(f"{v:.10e}" for v in f) for f in filters]
text = "\n".join(lines) + "\n"
out = sys.argv[1] if len(sys.argv) > 1 else "bsif_3x3_8bit.txt"
with open(out, "w") as fh:
    fh.write(text)
print(hashlib.sha256(text.encode()).hexdigest())
