"""Detector-distance filtering of the gap sideband.

Sweeps the distance on the locfield2 preset (dynamics shared across d) and
the Rabi frequency on locfield1, printing refined d^2 P peak heights.
"""

import numpy as np

from pbgfluor.config import load_preset
from pbgfluor.runner import build_model, build_transfer, sweep
from pbgfluor.spectrum import incoherent_density, refine_peak


def gap_peak(res):
    cfg = res.config
    model = build_model(cfg)
    wl, om = model.atom.laser_frequency, model.atom.rabi
    cap = cfg.spatial.omega_c - 1e-5
    f = np.linspace(wl - 2 * om - 0.05, min(wl - 2 * om + 0.05, cap), 2001)
    cen = f[np.argmax(incoherent_density(res.stationary, f - wl))]
    w, p = refine_peak(res.stationary, build_transfer(cfg, model), wl, (cen - 0.03, min(cen + 0.03, cap)))
    return cen, w, cfg.spatial.d**2 * p


def main() -> None:
    cfg = load_preset("locfield2")
    ds = [5.0, 10.0, 20.0, 40.0]
    peaks = [gap_peak(r) for r in sweep(cfg, "spatial.d", ds, write=False)]
    ell = np.sqrt(cfg.spatial.curvature / abs(peaks[0][0] - cfg.spatial.omega_c))
    print(f"locfield2: gap sideband near {peaks[0][0]:.4f}, localization length {ell:.3f}")
    for (d1, a), (d2, b) in zip(zip(ds, peaks), zip(ds[1:], peaks[1:])):
        print(f"  d {d1:g} -> {d2:g}: ratio {b[2] / a[2]:.4e}, law {np.exp(-2 * (d2 - d1) / ell):.4e}")

    print("locfield1 (d = 10):")
    for om, r in zip([0.55, 0.7, 0.9], sweep(load_preset("locfield1"), "atom.epsilon", [0.55, 0.7, 0.9], write=False)):
        print(f"  Omega {om}: gap-sideband d^2P {gap_peak(r)[2]:.3e}")


if __name__ == "__main__":
    main()
