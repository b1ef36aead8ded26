#!/usr/bin/env python3
"""Independent reference SCF for the cross-check test.

Self-contained numpy/scipy implementation of restricted Kohn-Sham with LDA
exchange (Slater, no correlation) in a minimal s-only Gaussian basis, using
closed-form s-integral formulas and the same published quadrature constants
(Gauss-Chebyshev second kind radial rule with the Becke radial map, Lebedev
194-point angular rule, Becke partition) as the C++ engine.  Run it to print
frozen reference total energies for H2 (R = 1.4 bohr) and He.

Everything here is derived from textbook formulas independently of the C++
code paths (McMurchie-Davidson recursions, Hermite expansions) it checks.
"""

import numpy as np
from scipy.linalg import eigh
from scipy.special import erf

BOHR_PER_ANGSTROM = 1.8897259886

# ---------------------------------------------------------------- basis

STO3G = {
    1: [(3.42525091, 0.15432897), (0.62391373, 0.53532814), (0.16885540, 0.44463454)],
    2: [(6.36242139, 0.15432897), (1.15892300, 0.53532814), (0.31364979, 0.44463454)],
}


def contracted_s(element):
    """Exponents and normalized contraction weights of raw primitives."""
    exps = np.array([e for e, _ in STO3G[element]])
    raw = np.array([c for _, c in STO3G[element]])
    prim_norm = (2.0 * exps / np.pi) ** 0.75
    c = raw * prim_norm
    ov = 0.0
    for i in range(len(exps)):
        for j in range(len(exps)):
            ov += c[i] * c[j] * (np.pi / (exps[i] + exps[j])) ** 1.5
    return exps, c / np.sqrt(ov)


# ------------------------------------------------------ closed-form integrals


def boys0(t):
    t = np.asarray(t, dtype=float)
    small = t < 1e-14
    safe = np.where(small, 1.0, t)
    return np.where(small, 1.0 - t / 3.0, 0.5 * np.sqrt(np.pi / safe) * erf(np.sqrt(safe)))


def build_integrals(centers, elements, charges):
    n = len(centers)
    prims = [contracted_s(el) for el in elements]
    S = np.zeros((n, n))
    T = np.zeros((n, n))
    V = np.zeros((n, n))
    for a in range(n):
        ea, ca = prims[a]
        for b in range(n):
            eb, cb = prims[b]
            AB2 = float(np.dot(centers[a] - centers[b], centers[a] - centers[b]))
            for i, ai in enumerate(ea):
                for j, bj in enumerate(eb):
                    p = ai + bj
                    mu = ai * bj / p
                    pref = ca[i] * cb[j] * np.exp(-mu * AB2)
                    S[a, b] += pref * (np.pi / p) ** 1.5
                    T[a, b] += pref * mu * (3.0 - 2.0 * mu * AB2) * (np.pi / p) ** 1.5
                    P = (ai * centers[a] + bj * centers[b]) / p
                    for C, Z in charges:
                        PC2 = float(np.dot(P - C, P - C))
                        V[a, b] -= Z * pref * (2.0 * np.pi / p) * boys0(p * PC2)
    eri = np.zeros((n, n, n, n))
    for a in range(n):
        ea, ca = prims[a]
        for b in range(n):
            eb, cb = prims[b]
            AB2 = float(np.dot(centers[a] - centers[b], centers[a] - centers[b]))
            for c_ in range(n):
                ec, cc = prims[c_]
                for d in range(n):
                    ed, cd = prims[d]
                    CD2 = float(np.dot(centers[c_] - centers[d], centers[c_] - centers[d]))
                    val = 0.0
                    for i, ai in enumerate(ea):
                        for j, bj in enumerate(eb):
                            p = ai + bj
                            P = (ai * centers[a] + bj * centers[b]) / p
                            kab = np.exp(-ai * bj / p * AB2)
                            for k, ck in enumerate(ec):
                                for l, dl in enumerate(ed):
                                    q = ck + dl
                                    Q = (ck * centers[c_] + dl * centers[d]) / q
                                    kcd = np.exp(-ck * dl / q * CD2)
                                    PQ2 = float(np.dot(P - Q, P - Q))
                                    val += (
                                        ca[i] * cb[j] * cc[k] * cd[l] * kab * kcd
                                        * 2.0 * np.pi ** 2.5
                                        / (p * q * np.sqrt(p + q))
                                        * boys0(p * q / (p + q) * PQ2)
                                    )
                    eri[a, b, c_, d] = val
    return S, T, V, eri


# ------------------------------------------------------------------- grid

BRAGG_ANGSTROM = {1: 0.35, 2: 1.40}


def lebedev_194():
    """Published 194-point rule, expanded from its six orbit families."""
    pts, wts = [], []

    def add(p, w):
        pts.append(p)
        wts.append(w)

    for ax in range(3):
        for s in (1.0, -1.0):
            v = np.zeros(3)
            v[ax] = s
            add(v, 0.1782340447244611e-2)
    t = np.sqrt(0.5)
    for hole in range(3):
        idx = [k for k in range(3) if k != hole]
        for s1 in (1, -1):
            for s2 in (1, -1):
                v = np.zeros(3)
                v[idx[0]], v[idx[1]] = s1 * t, s2 * t
                add(v, 0.5716905949977102e-2)
    t = np.sqrt(1.0 / 3.0)
    for s1 in (1, -1):
        for s2 in (1, -1):
            for s3 in (1, -1):
                add(np.array([s1 * t, s2 * t, s3 * t]), 0.5573383178848738e-2)
    for a, w in [
        (0.6712973442695226, 0.5608704082587997e-2),
        (0.2892465627575439, 0.5158237711805383e-2),
        (0.4446933178717437, 0.5518771467273614e-2),
        (0.1299335447650067, 0.4106777028169394e-2),
    ]:
        b = np.sqrt(1.0 - 2.0 * a * a)
        for bpos in range(3):
            for s1 in (1, -1):
                for s2 in (1, -1):
                    for s3 in (1, -1):
                        v = np.array([a, a, a])
                        v[bpos] = b
                        add(v * np.array([s1, s2, s3]), w)
    a, w = 0.3457702197611283, 0.5051846064614808e-2
    b = np.sqrt(1.0 - a * a)
    for zero in range(3):
        idx = [k for k in range(3) if k != zero]
        for first, second in ((a, b), (b, a)):
            for s1 in (1, -1):
                for s2 in (1, -1):
                    v = np.zeros(3)
                    v[idx[0]], v[idx[1]] = s1 * first, s2 * second
                    add(v, w)
    a, b, w = 0.1590417105383530, 0.8360360154824589, 0.5530248916233094e-2
    c = np.sqrt(1.0 - a * a - b * b)
    import itertools

    for perm in itertools.permutations((a, b, c)):
        for s1 in (1, -1):
            for s2 in (1, -1):
                for s3 in (1, -1):
                    add(np.array(perm) * np.array([s1, s2, s3]), w)
    return np.array(pts), np.array(wts)


def radial_rule(n, rm):
    i = np.arange(1, n + 1)
    theta = i * np.pi / (n + 1)
    x = np.cos(theta)
    w_plain = np.pi / (n + 1) * np.sin(theta)
    r = rm * (1.0 + x) / (1.0 - x)
    jac = 2.0 * rm / (1.0 - x) ** 2
    return r, w_plain * jac * r * r


def becke_weights(centers, point):
    n = len(centers)
    if n == 1:
        return np.ones(1)
    d = np.array([np.linalg.norm(point - c) for c in centers])
    cell = np.ones(n)
    for i in range(n):
        for j in range(i + 1, n):
            mu = (d[i] - d[j]) / np.linalg.norm(centers[i] - centers[j])
            mu = min(1.0, max(-1.0, mu))
            f = mu
            for _ in range(3):
                f = 1.5 * f - 0.5 * f ** 3
            s = 0.5 * (1.0 - f)
            cell[i] *= s
            cell[j] *= 1.0 - s
    return cell / cell.sum()


def build_grid(centers, elements, n_rad=75):
    leb_pts, leb_wts = lebedev_194()
    pts, wts = [], []
    for ci, (center, el) in enumerate(zip(centers, elements)):
        bragg = BRAGG_ANGSTROM[el] * BOHR_PER_ANGSTROM
        rm = bragg if el == 1 else 0.5 * bragg
        r, wr = radial_rule(n_rad, rm)
        for rr, wrr in zip(r, wr):
            shell_w = 4.0 * np.pi * wrr
            for lp, lw in zip(leb_pts, leb_wts):
                point = center + rr * lp
                cell = becke_weights(centers, point)[ci]
                pts.append(point)
                wts.append(shell_w * lw * cell)
    return np.array(pts), np.array(wts)


# -------------------------------------------------------------------- SCF


def scf(centers, elements, n_electrons, label):
    centers = [np.asarray(c, dtype=float) for c in centers]
    charges = [(c, float(z)) for c, z in zip(centers, elements)]
    S, T, V, eri = build_integrals(centers, elements, charges)
    pts, wts = build_grid(centers, elements)

    exps_coefs = [contracted_s(el) for el in elements]
    phi = np.zeros((len(pts), len(centers)))
    for a, (center, (exps, coefs)) in enumerate(zip(centers, exps_coefs)):
        r2 = np.sum((pts - center) ** 2, axis=1)
        for e, c in zip(exps, coefs):
            phi[:, a] += c * np.exp(-e * r2)

    cx = 0.75 * (3.0 / np.pi) ** (1.0 / 3.0)
    h = T + V
    n_occ = n_electrons // 2

    def density(gamma):
        return np.einsum("ga,ab,gb->g", phi, gamma, phi, optimize=True)

    def xc(gamma):
        rho = density(gamma)
        mask = rho > 1e-12
        ex = -cx * np.sum(wts[mask] * rho[mask] ** (4.0 / 3.0))
        vx = np.zeros_like(rho)
        vx[mask] = -(4.0 / 3.0) * cx * rho[mask] ** (1.0 / 3.0)
        vmat = phi.T @ (phi * (wts * vx)[:, None])
        return ex, vmat

    _, C = eigh(h, S)
    gamma = 2.0 * C[:, :n_occ] @ C[:, :n_occ].T
    energy = 0.0
    for it in range(200):
        J = np.einsum("abcd,cd->ab", eri, gamma, optimize=True)
        ex, vxc = xc(gamma)
        F = h + J + vxc
        new_energy = np.sum(gamma * h) + 0.5 * np.sum(gamma * J) + ex
        comm = F @ gamma @ S - S @ gamma @ F
        if it > 0 and abs(new_energy - energy) < 1e-13 and np.abs(comm).max() < 1e-11:
            energy = new_energy
            break
        energy = new_energy
        _, C = eigh(F, S)
        gamma = 2.0 * C[:, :n_occ] @ C[:, :n_occ].T

    e_nuc = 0.0
    for a in range(len(centers)):
        for b in range(a + 1, len(centers)):
            e_nuc += elements[a] * elements[b] / np.linalg.norm(centers[a] - centers[b])
    total = energy + e_nuc
    n_grid = np.sum(wts * density(gamma))
    print(f"{label}: iterations={it}")
    print(f"  electronic = {energy:.12f} Ha")
    print(f"  nuclear    = {e_nuc:.12f} Ha")
    print(f"  total      = {total:.12f} Ha")
    print(f"  grid electron count = {n_grid:.12f} (target {n_electrons})")
    return total


def main():
    scf([(0.0, 0.0, 0.7), (0.0, 0.0, -0.7)], [1, 1], 2, "H2 (R=1.4 bohr, minimal, lda-x)")
    scf([(0.0, 0.0, 0.0)], [2], 2, "He (minimal, lda-x)")


if __name__ == "__main__":
    main()
