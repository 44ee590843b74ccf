"""Fit the shipped skin / non-skin colour model.

Fits a 2-component full-covariance Gaussian mixture per class over
normalised rg chromaticity, from a small hand-assembled palette of
skin-tone and non-skin swatches, and writes the key-value config that
``face3dsr.priors.SkinModel.load`` reads.

    python tools/fit_skin_model.py > src/face3dsr/resources/skin_model.cfg
"""
import sys

import numpy as np
from sklearn.mixture import GaussianMixture

SKIN = [
    (255, 224, 189), (255, 205, 148), (234, 192, 134), (255, 173, 96), (255, 227, 159),
    (224, 172, 105), (198, 134, 66), (141, 85, 36), (241, 194, 125), (229, 184, 143),
    (194, 150, 130), (165, 114, 87), (120, 75, 60), (233, 180, 155), (219, 160, 130),
    (92, 58, 44), (176, 122, 98), (250, 210, 180), (212, 158, 122), (60, 40, 32),
]
NON_SKIN = [
    (34, 139, 34), (0, 128, 0), (124, 252, 0), (46, 139, 87), (107, 142, 35),
    (0, 0, 255), (70, 130, 180), (30, 144, 255), (0, 191, 255), (25, 25, 112),
    (128, 128, 128), (200, 200, 200), (245, 245, 245), (60, 60, 60), (112, 128, 144),
    (128, 0, 128), (186, 85, 211), (75, 0, 130), (255, 255, 0), (173, 255, 47),
    (0, 255, 255), (0, 128, 128), (64, 224, 208), (240, 230, 140), (152, 251, 152),
]


def chroma(rgb, rng, jitter=300):
    rgb = np.repeat(np.asarray(rgb, dtype=float), jitter, axis=0)
    rgb *= rng.uniform(0.6, 1.0, size=(rgb.shape[0], 1))  # brightness does not move chromaticity much
    rgb += rng.normal(0, 6, size=rgb.shape)
    rgb = np.clip(rgb, 1, 255)
    s = rgb.sum(axis=1, keepdims=True)
    return (rgb / s)[:, :2]


def main(out=sys.stdout):
    rng = np.random.default_rng(0)
    print("# skin colour model: 2-component GMM per class over (r, g) = (R, G) / (R + G + B)", file=out)
    print("# generated by tools/fit_skin_model.py", file=out)
    print("prior.skin = 0.5", file=out)
    print("prior.nonskin = 0.5", file=out)
    for cls, palette in (("skin", SKIN), ("nonskin", NON_SKIN)):
        gm = GaussianMixture(2, covariance_type="full", random_state=0).fit(chroma(palette, rng))
        for k in range(2):
            print(f"{cls}.{k}.weight = {gm.weights_[k]:.6f}", file=out)
            print(f"{cls}.{k}.mean = " + " ".join(f"{v:.6f}" for v in gm.means_[k]), file=out)
            print(f"{cls}.{k}.cov = " + " ".join(f"{v:.8f}" for v in gm.covariances_[k].ravel()), file=out)


if __name__ == "__main__":
    main()
