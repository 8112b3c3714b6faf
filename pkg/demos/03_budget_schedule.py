"""The cubic rank budget: how many directions may move, and when.

The budget starts at b0 when warmup ends, decays with the cube of training
progress, and is clamped to zero outside the active window. Rank changes
only fire every delta_t steps, so the effective movement is the budget
sampled at those steps. Note the half-step at t=3000: the raw value is
exactly 0.5 and rounds away from zero, to 1.

CLI equivalent: `rankflex schedule 4 1000 1000 5000 200`.
"""

from rankflex.allocator import BudgetSchedule

sched = BudgetSchedule(b0=4, t_warmup=1000, t_final=1000,
                       total_steps=5000, delta_t=200)

print(f"b0={sched.b0}, warmup ends t={sched.t_warmup}, "
      f"window closes t={sched.window_end}, total T={sched.total_steps}")
print()
print("   t  budget  fires?   ")
for t in (0, 500, 999, 1000, 1200, 1400, 1700, 2000, 2500, 3000, 3500,
          3999, 4000, 4500):
    b = sched.budget(t)
    fires = "yes" if sched.is_allocation_step(t) else "no"
    bar = "#" * b
    print(f"{t:5d}  {b:6d}  {fires:>5s}   {bar}")

steps = sched.allocation_steps()
moving = [t for t in steps if sched.budget(t) > 0]
print()
print(f"{len(steps)} allocation steps in the window, "
      f"{len(moving)} of them with budget left: {moving}")
print(f"raw cubic value at t=3000: {4 * (1 - 2000 / 4000) ** 3} -> budget {sched.budget(3000)}")
