"""
Checking gradients
==================

Every differentiable primitive is compared against central finite
differences, then the full pretraining loss on a micro model is checked
with and without the gradient barrier.
"""
import time

from pointmode.autodiff.checks import run_primitive_checks
from pointmode.verify import TOLERANCE, end_to_end_error, micro_setup

t0 = time.perf_counter()
report = run_primitive_checks(range(3))
worst = max(report, key=report.get)
print("%d primitives checked, worst %s at %.2e (tolerance %g)" % (len(report), worst, report[worst], TOLERANCE))

model, cfg, prep = micro_setup(0)
print("micro model has", model.num_parameters(), "parameters")

# the barrier hides the object encoder from the box loss, so those
# parameters are left out of the comparison when it is on
for sg in (False, True):
    err = end_to_end_error(0, stop_gradient=sg)
    print("end-to-end, barrier %-3s: max rel err %.2e" % ("on" if sg else "off", err))
print("took %.0fs" % (time.perf_counter() - t0))
