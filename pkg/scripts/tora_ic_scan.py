"""Scan TORA initial conditions for the gamma-monotonicity property.

For each initial state, integrate the soft-reset loop for gamma in
{10, 100, 1000} over 50 s and print the ratios of consecutive terminal
energies (the property asks for ratios <= 0.95).
"""

import argparse
import itertools

import numpy as np

from softreset.controllers import make_example1_fore
from softreset.di_core import interconnect
from softreset.integrate import IntegratorConfig, integrate_soft
from softreset.plants import tora_plant

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t-end", type=float, default=50.0)
    ap.add_argument("--levels", type=float, nargs="+", default=[0.0, 1.0])
    args = ap.parse_args()
    ctrl, energy = make_example1_fore()
    loops = [interconnect(tora_plant(), ctrl, g, energy=energy) for g in (10.0, 100.0, 1000.0)]
    cfg = IntegratorConfig(t_end=args.t_end, max_norm=1e3)
    for x0 in itertools.product(args.levels, repeat=5):
        if not any(x0):
            continue
        finals = np.array([integrate_soft(loop, cfg, x0).V[-1] for loop in loops])
        r = finals[1:] / finals[:-1]
        flag = "ok" if np.all(r <= 0.95) else "--"
        print(f"{flag} x0={x0} V(T)={np.array2string(finals, precision=5)} ratios={np.round(r, 3)}", flush=True)
