"""Independent reference values, computed with mpmath and frozen into the tests.

Run ``python tests/oracles/compute_oracles.py`` to regenerate. Nothing here
imports levyscope.
"""

import mpmath as mp

mp.mp.dps = 30


def cosine_levy(k, alpha, a=0, b=mp.inf):
    """2 * int_a^b (cos(k z) - 1) z^(-1-alpha) dz, with a series near 0."""
    def f(z):
        if z < mp.mpf("1e-3"):
            # (cos kz - 1) = -(kz)^2/2 + (kz)^4/24 - ...
            s = sum((-1) ** n * (k * z) ** (2 * n) / mp.factorial(2 * n) for n in range(1, 8))
            return s * z ** (-1 - alpha)
        return (mp.cos(k * z) - 1) * z ** (-1 - alpha)
    if b == mp.inf:
        head = mp.quad(f, [a, 1])
        tail = mp.quadosc(lambda z: mp.cos(k * z) * z ** (-1 - alpha), [1, mp.inf],
                          omega=k) - 1 / alpha
        return 2 * (head + tail)
    return 2 * mp.quad(f, [a, b])


def kink_outer_limit(alpha):
    """int (-min(|z|,1)) |z|^(-1-alpha) dz over R, antiderivative form."""
    return -2 * (1 / (1 - mp.mpf(alpha)) + 1 / mp.mpf(alpha))


def gaussian_linear_map(alpha, scale=2, width=1, x=0):
    """int (phi(x + s z) - phi(x) - phi'(x) s z 1{|z|<=1}) |z|^(-1-alpha) dz.

    The measure is symmetric, so the compensator cancels between z and -z
    and the integral is taken over z > 0 in paired form.
    """
    x = mp.mpf(x)
    phi = lambda y: mp.exp(-y ** 2 / (2 * width ** 2))
    f = lambda z: (phi(x + scale * z) + phi(x - scale * z) - 2 * phi(x)) * z ** (-1 - alpha)
    return mp.quad(f, [0, 0.25, 0.5, 1, 2, mp.inf])


def gaussian_K_tempered(gp, gm, x, width=1):
    """int (phi(x+z) - phi(x) - phi'(x) z) e^{-g|z|}/|z| dz, rates gp (z>0), gm (z<0)."""
    x = mp.mpf(x)
    phi = lambda y: mp.exp(-y ** 2 / (2 * width ** 2))
    dphi = -x / width ** 2 * phi(x)
    pos = lambda z: (phi(x + z) - phi(x) - dphi * z) * mp.exp(-gp * z) / z
    neg = lambda z: (phi(x - z) - phi(x) + dphi * z) * mp.exp(-gm * z) / z
    pts = [0, 0.5, 1, 2, 4, mp.inf]
    return mp.quad(pos, pts) + mp.quad(neg, pts)


def cosine_outer(k, alpha, a=1):
    """2 * int_a^inf (cos(k z) - 1) z^(-1-alpha) dz (no compensator beyond 1)."""
    return 2 * (mp.quadosc(lambda z: mp.cos(k * z) * z ** (-1 - alpha), [a, mp.inf], omega=k)
                - a ** (-alpha) / alpha)


if __name__ == "__main__":
    for alpha in (0.5, 1.5):
        for k in (1, 2):
            print(f"cosine alpha={alpha} k={k}: {mp.nstr(cosine_levy(k, alpha), 17)}")
    print("cosine inner delta=1 alpha=0.5:", mp.nstr(cosine_levy(1, 0.5, 0, 1), 17))
    print("kink alpha=0.5:", mp.nstr(kink_outer_limit(0.5), 17))
    print("gaussian 2z alpha=0.5 x=0:", mp.nstr(gaussian_linear_map(0.5), 17))
    print("gaussian 2z alpha=0.5 x=0.3:", mp.nstr(gaussian_linear_map(0.5, x=0.3), 17))
    print("K tempered (1,2) x=0.3:", mp.nstr(gaussian_K_tempered(1, 2, 0.3), 17))
    print("cosine outer alpha=1.5 from 1:", mp.nstr(cosine_outer(1, 1.5), 17))
    print("closed form check alpha=0.5 k=1:",
          mp.nstr(-2 * mp.gamma(0.5) * mp.cos(mp.pi / 4) / 0.5, 17))

