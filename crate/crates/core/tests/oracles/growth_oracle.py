"""Arbitrary-precision reference values for the growth solver tests.

Run: python3 growth_oracle.py
"""
from mpmath import mp, mpf, log, findroot, diff

mp.dps = 40


def big_lambda(theta, lam, c):
    return log(lam**c / (-theta * (lam - theta) ** (c - 1)))


def phi(c, lam=mpf(1)):
    g = lambda th: big_lambda(th, lam, c) - th * diff(lambda u: big_lambda(u, lam, c), th)
    # bisection bracket then polish
    lo, hi = -4 * lam * c, -mpf("1e-12") * lam
    for _ in range(400):
        mid = (lo + hi) / 2
        if g(mid) * g(lo) > 0:
            lo = mid
        else:
            hi = mid
    th = findroot(g, (lo + hi) / 2)
    return th, c * th / (lam * big_lambda(th, lam, c))


if __name__ == "__main__":
    for th in ["-0.1", "-0.5", "-1", "-2.5", "-7"]:
        for lam in ["0.5", "1", "2"]:
            print("L2", th, lam, mp.nstr(big_lambda(mpf(th), mpf(lam), 2), 20))
    for c in range(1, 11):
        th, ph = phi(c)
        print("phi", c, mp.nstr(th, 20), mp.nstr(ph, 20), mp.nstr(1 / (1 + ph), 20))
