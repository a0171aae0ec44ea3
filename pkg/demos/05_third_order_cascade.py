"""A third-order cascade: every term of the recursion awake.

Second-order plants leave the estimator cross-coupling sums of the
virtual laws empty, so this demo runs the synthetic order-3 plant with
polynomial regressors (deterministic per seed) where they matter.  One
engine evaluation exposes the whole cascade: errors, regressor residual
vectors, layer matrices, damping gains, the coupling scalar and the
terminal gain.

The full closed-loop runs take a couple of minutes each (they are part of
the acceptance suite); here we integrate a short window and then inspect
one evaluation in detail.

Run:  python demos/05_third_order_cascade.py
"""

import numpy as np

from expstab import BacksteppingEngine, fit_envelope, simulate
from expstab.scenarios import build_synthetic

scn = build_synthetic("theorem1", seed=0, horizon=1.5)
print(f"plant: {scn.model.name}, x0 = {np.round(scn.x0, 4)}")

traj = simulate(scn)
fit = fit_envelope(traj, rate=0.3)
print(f"short run: status={traj.status}, |x(1.5)| = "
      f"{np.linalg.norm(traj.x[-1]):.3e}, envelope N = {fit.amplitude:.3f}, "
      f"max residual = {traj.monitors['max_residual']:.1e}")

print()
print("one cascade evaluation at the initial state:")
engine = BacksteppingEngine(scn.model, scn.gains)
ev = engine.evaluate(0.0, scn.x0, np.zeros(2))
print(f"  z        = {np.round(ev.z, 6)}")
print(f"  alpha    = {np.round(ev.alpha, 6)}")
print(f"  zeta     = {np.round(ev.zeta, 6)}")
print(f"  |W_i|_F^2 = {np.round(ev.W_frob_sq, 6)}")
print(f"  psi      = {ev.psi:+.6f}")
print(f"  psi_bar  = {np.round(ev.psi_bar, 6)}")
print(f"  kappa    = {ev.kappa:.6f}")
print(f"  w-residuals = {[f'{r:.1e}' for r in ev.resid_w]}, "
      f"psi-residual = {ev.resid_psi:.1e}")
print()
print("The partials of each virtual law propagate through the same")
print("recursion that computes its value, so the layer matrices and the")
print("coupling factor are exact to quadrature precision at every step.")
