"""Damped noisy oscillator: energy reduction, stationary radius and phase.

The symbolic part reduces the oscillator through h = (x^2 + y^2)/2 with
a symbolic damping f.  The numerical part uses f = 1: the radius settles to
the density 2 r exp(-r^2), and the unwrapped angle advances at unit speed
on average.

    python3 demos/damped_oscillator.py
"""
import math

import numpy as np
import sympy as sp

from sdskit import catalog
from sdskit.geometry import SDS, VectorField
from sdskit.reduction import QuotientMap, reduce_sds
from sdskit.sim import RngConfig, martingale_test, simulate, stationary_density_1d, unwrapped_angle


def main() -> None:
    rep = reduce_sds(catalog.damped_oscillator(), catalog.energy_map())
    print("reduced generator:", rep.reduced)
    print("realized SDS: drift", rep.realized.drift, "noise", rep.realized.noise[0])

    # radius process, sampled through the planar system
    R = catalog.radial_chart()
    (r,) = R.symbols
    reduced = SDS(R, VectorField(R, (1 / (2 * r) - r,)), (VectorField(R, (1,)),))
    Z = catalog.damped_oscillator(1)
    x, y = Z.chart.symbols
    phi = QuotientMap(Z.chart, R, (sp.sqrt(x**2 + y**2),), name="radius")
    dens = stationary_density_1d(
        reduced, 0.0, 4.0, [1.0, 0.0], bins=40, burn_in=5.0, T=20.0, n=4000, dt=5e-3, sample_every=0.5,
        rng=RngConfig(1), lift=(Z, phi),
    )
    print(f"radius: sup|hist - oracle| {dens.sup_distance:.4f}, mean {dens.mean:.4f} (exact {math.sqrt(math.pi) / 2:.4f}), "
          f"median {dens.median:.4f} (exact {math.sqrt(math.log(2)):.4f})")

    times = np.arange(0, 20.0 + 1e-9, 1e-2)
    ens = simulate(Z, [1.0, 0.0], 1e-2, 20.0, 1000, RngConfig(2), sample_times=times)
    mt = martingale_test(ens.times, unwrapped_angle(ens.states))
    print(f"angle: mean frequency {mt.frequency:.4f}, window z-scores {np.round(mt.z_scores, 2).tolist()}")


if __name__ == "__main__":
    main()
