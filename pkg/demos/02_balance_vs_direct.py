# 02_balance_vs_direct.py
# The core contrast: allocating straight at the targeted ratio lets the
# covariate imbalance grow like sqrt(N); pushing the probability against
# the running imbalance keeps it flat, at no cost to the target ratios.

from cbara import (
    Allocation,
    Family,
    ReplicationPlan,
    Scenario,
    ScenarioId,
    TargetPolicy,
    TrialConfig,
    UpdateMechanism,
    Weighting,
    run_replications,
)

REPS = 200

print(f"{'N':>5} {'allocation':>10} {'E|lambda|':>10} {'E|psi|':>8} "
      f"{'mean response':>14}")
for n in (200, 800):
    for allocation in (Allocation.DIRECT, Allocation.BALANCE):
        cfg = TrialConfig(
            n_units=n,
            scenario=Scenario(ScenarioId.A),
            policy=TargetPolicy(family=Family.CRD),
            weighting=Weighting.UNWEIGHTED,
            mechanism=UpdateMechanism.clipped(1.0, 0.5)
            if allocation is Allocation.BALANCE
            else UpdateMechanism.direct(),
            allocation=allocation,
        )
        plan = ReplicationPlan(base_config=cfg, n_reps=REPS, base_seed=2024)
        s = run_replications(plan)
        print(f"{n:>5} {allocation.value:>10} {s.mean_lambda_norm:>10.3f} "
              f"{s.mean_psi_abs:>8.3f} {s.mean_response:>14.3f}")

print()
print("direct rows: |lambda| roughly doubles when N quadruples (sqrt growth).")
print("balance rows: |lambda| barely moves. |psi| tracks a covariate the")
print("randomization never saw, so it grows like sqrt(N) either way, just")
print("with a smaller constant under balancing.")
