"""Numeric evidence that a gain function is an enhanced Nussbaum function.

The unknown-direction controllers need gains whose positive and negative
parts both accumulate unbounded average area, with truncated-integral
ratios swinging unboundedly both ways.  Those are statements about limits
at infinity, so a desk check can only gather finite-range evidence: here
we watch all four running quantities clear a threshold on [0, xi_max],
and we watch two non-examples fail.

Run:  python demos/03_nussbaum_verifier.py
"""

from expstab import NussbaumSpec, nussbaum_value, verify_enhanced

print("candidate gains")
print("=" * 64)
for spec, label in (
    (NussbaumSpec(kind="sin-exp-square"), "sin(xi) exp(xi^2)"),
    (NussbaumSpec(kind="cos-exp-square"), "cos(xi) exp(xi^2)"),
    (NussbaumSpec(kind="user", fn=lambda x: 1.0), "constant 1"),
    (NussbaumSpec(kind="user", fn=lambda x: x), "identity"),
):
    print(f"\n{label}:")
    print(verify_enhanced(spec, xi_max=6.0))

print()
print("safe evaluation: arguments beyond the configured bound refuse loudly")
spec = NussbaumSpec(kind="sin-exp-square", xi_max=2.0)
print(f"  N(1.9) = {nussbaum_value(spec, 1.9):.4f}")
try:
    nussbaum_value(spec, 2.5)
except Exception as exc:
    print(f"  N(2.5) -> {type(exc).__name__}: {exc}")
