"""Find the lowest chassis budget the "minimal UF impact" policy accepts on a history of 10,000 draw readings
whose three highest readings are 2900, 2850 and 2850 W. Then add the 10% buffer and compare the result to the
nameplate power of the chassis."""

from miniOversubscription.EXAMPLES import comment


comment('Importing necessary modules...')
from miniOversubscription.Computations.Oversubscription import (
    OversubPolicy,
    HistoryEstimates,
    find_min_budget,
    worked_example_draws)


comment('Loading the bundled draw history with `worked_example_draws()`...')
draws = worked_example_draws()
comment('Readings:', draws.readings.size, ' highest:', draws.readings[-3:].tolist())

comment('The policy allows 0% of readings with user-facing impact and 1% with non-user-facing impact only.')
policy = OversubPolicy.preset('minimal_uf_impact')
comment(policy)

comment('The allocation history says 40% of cores run user-facing VMs at 65% utilization, the rest at 44%.')
estimates = HistoryEstimates(beta=0.4, util_uf=0.65, util_nuf=0.44)

comment('\nSearching with `find_min_budget(draws, policy, estimates)`...')
result = find_min_budget(draws, policy, estimates)

comment('Every candidate the search tried (each one a reading minus 10 W):')
for entry in result.audit:
    comment(f'  {entry.candidate_w:7.1f} W  events {entry.events}  (uf {entry.uf_events}, nuf-only {entry.nuf_events}, '
            f'infeasible {entry.infeasible_events})  worst shave {entry.worst_shave_w:5.1f} W  '
            f'{"accepted" if entry.accepted else "rejected"}')

comment('\nThe lowest accepted candidate is', result.p_min_w, 'W.')
comment('With the buffer the budget is', round(result.final_budget_w, 1), 'W of', result.provisioned_w,
        'W provisioned,', f'{100 * result.delta:.1f}% of the power freed for more servers.')

comment('\nThe same search for a full-server (RAPL only) policy:')
sota = find_min_budget(draws, OversubPolicy.preset('state_of_the_art'), estimates)
comment('P_min', sota.p_min_w, 'W, final budget', round(sota.final_budget_w, 1), 'W')
