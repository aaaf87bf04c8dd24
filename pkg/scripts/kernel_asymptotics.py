"""Long-time envelope of the periodic-band kernel and the band-edge form."""

import numpy as np

from pbgfluor.environment import PeriodicBand3DKernel, parabolic_from_band

tau = np.linspace(50.0, 500.0, 200001)
a = np.abs(PeriodicBand3DKernel(1.0).evaluate(tau))
pk = np.where((a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:]))[0] + 1
slope = np.polyfit(np.log(tau[pk]), np.log(a[pk]), 1)[0]
print(f"log-log slope of |alpha| maxima on [50, 500]: {slope:.4f}")

par = np.abs(parabolic_from_band(1.0, 1.0, 0.0).evaluate(tau[pk]))
ratio = par / a[pk]
print(f"band-edge kernel / envelope: {ratio.min():.4f} .. {ratio.max():.4f}")
print(f"pi^1.5 / 8 = {np.pi**1.5 / 8:.4f}")
