"""
Tracking a comparator that changes
==================================

Halfway through the run every context's better action flips.  Plain
Hedge has built up a lot of confidence by then and is slow to let go;
FixedShare keeps a floor under every action and recovers quickly.
"""


from fairbandit.core import Dims
from fairbandit.few import FewConfig, make_few
from fairbandit.harness import FewAgent, regret, run
from fairbandit.verify import piecewise_comparator, switching_script

T = 8192
dims = Dims(2, 2, 2, T)
script = switching_script(seed=0, horizon=T)
comp = piecewise_comparator(script, T // 2)

for base in ("tabular", "fixedshare"):
    trace = run(FewAgent(make_few(FewConfig(dims, eta=4.0), base)), script, seed=0)
    first = trace.exp_loss[: T // 2].sum()
    second = trace.exp_loss[T // 2:].sum()
    print(f"{base:10s} loss before switch {first:7.1f}  after {second:7.1f}  "
          f"regret {regret(trace, comp, script):7.1f}")
