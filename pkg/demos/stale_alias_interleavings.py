"""Why skipping shootdowns needs monotone virtual addresses.

Two threads of one process share two short-lived mappings. With address
reuse (iteration off) the second thread's cached translation can silently
resolve the reused address to the wrong frame -- the classic reuse hazard.
The bounded explorer enumerates every feasible interleaving of the 7-step
schedule and classifies each access against the shadow model.
"""
from fprsim.checks import aba_exploration

for va_iteration in (False, True):
    result = aba_exploration(va_iteration)
    mode = "on " if va_iteration else "off"
    print(f"va-iteration {mode}: {result['orders']} feasible interleavings, "
          f"{result['aba_violations']} stale-alias (ABA) hits, "
          f"{result['security_violations']} security violations")
    for order in result["aba_orders"]:
        print(f"  violating schedule (thread ids in execution order): {order}")
print("\nMonotone address assignment removes every violation: a stale entry")
print("can only point at an address the kernel never hands out again.")
