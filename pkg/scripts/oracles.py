"""Independent oracles whose outputs are frozen into the test suite.

1. Dense-sampler Morrey norm of |x|^{-alpha} on the unit ball (q = 2,
   lam = 1, alpha = 1) on the 24^3 grid over [-1.125, 1.125]^3: brute-force
   sorted distances from every mask centre, 40 geometric radii, no FFT.
2. Weighted L^2 norm of 1 on [-4, 4]^3 with kappa = 2.5: midpoint rule on
   16^3, 32^3 and 64^3 followed by two Richardson steps (h^2, h^4), cross
   checked with scipy's adaptive cubature of the radial-symmetric integrand.
"""

import numpy as np
from scipy import integrate

Q, LAM = 2.0, 1.0


def singular_field(N=24, lo=-1.125, hi=1.125, radii=40):
    h = (hi - lo) / N
    ax = lo + (np.arange(N) + 0.5) * h
    X = np.stack(np.meshgrid(ax, ax, ax, indexing="ij")).reshape(3, -1)
    r = np.sqrt(np.sum(X**2, axis=0))
    inside = r < 1.0
    pts = X[:, inside]
    alpha = (3 - LAM) / Q
    dens = r[inside] ** (-alpha * Q) * h**3
    ext = (np.ptp(np.argwhere(inside.reshape(N, N, N)), axis=0) + 1) * h
    diam = float(np.linalg.norm(ext))
    R = np.geomspace(h, diam, radii)
    best = 0.0
    for c in pts.T:
        d = np.sqrt(np.sum((pts - c[:, None]) ** 2, axis=0))
        order = np.argsort(d, kind="stable")
        cum = np.concatenate([[0.0], np.cumsum(dens[order])])
        k = np.searchsorted(d[order], R, side="left")
        best = max(best, float(np.max(R ** (-LAM / Q) * cum[k] ** (1 / Q))))
    return best


def weighted_box(kappa=2.5, L=4.0):
    vals = []
    for N in (16, 32, 64):
        h = 2 * L / N
        ax = -L + (np.arange(N) + 0.5) * h
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        vals.append(np.sum((1 + X**2 + Y**2 + Z**2) ** (-kappa / 2)) * h**3)
    r1 = [(4 * vals[i + 1] - vals[i]) / 3 for i in range(2)]
    rich = (16 * r1[1] - r1[0]) / 15
    # octant symmetry: 8 * int_0^L int_0^L int_0^L
    cub, _ = integrate.tplquad(lambda z, y, x: (1 + x * x + y * y + z * z) ** (-kappa / 2), 0, L, 0, L, 0, L,
                               epsabs=1e-12, epsrel=1e-12)
    return np.sqrt(rich), np.sqrt(8 * cub)


if __name__ == "__main__":
    print("singular dense-sampler norm:", repr(singular_field()))
    print("weighted norm (richardson, cubature):", weighted_box())
