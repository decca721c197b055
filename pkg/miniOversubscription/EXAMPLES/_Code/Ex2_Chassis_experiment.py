"""Run one chassis of 12 blades with 36 user-facing and 36 non-user-facing VMs under a 2450 W budget, once with
the VMs mixed on every blade and once with the two kinds on separate blades, and see which user-facing cores get
slowed down."""

from miniOversubscription.EXAMPLES import comment


comment('Importing necessary modules...')
from miniOversubscription.Computations.ChassisExperiment import (
    ChassisExperimentConfig,
    place_vms,
    run_experiment)


comment('Loading the bundled experiment configuration (1 minute instead of 26 to keep it short)...')
config = ChassisExperimentConfig.bundled(duration_s=60.0)

comment('\nPlacing the VMs round robin with `place_vms(config)`:')
cluster = place_vms(config)
for blade in range(3):
    comment(f'  blade {blade}: VMs {list(cluster.vms_on(blade))}')

comment('\nWithout capping the chassis draws...')
uncapped = run_experiment(ChassisExperimentConfig.bundled(duration_s=60.0, capping=False)).summary()
comment(round(uncapped['max_draw_w'], 1), 'W, over the', config.budget_w, 'W budget all the time.')

comment('\n================ balanced placement, per-VM capping ================')
balanced = run_experiment(config).summary()
comment('Highest draw after the controllers acted:', round(balanced['max_draw_w'], 1), 'W')
comment('Share of ticks with every user-facing core at full speed:', balanced['uf_full_speed_fraction'])
comment('Throttled core-seconds:', balanced['throttled_core_seconds'])

comment('\n================ imbalanced placement, per-VM capping ================')
result = run_experiment(ChassisExperimentConfig.bundled(duration_s=60.0, placement='imbalanced'))
imbalanced = result.summary()
comment('Blades with user-facing VMs only:', imbalanced['uf_only_blades'])
comment('Blades RAPL slowed down:', imbalanced['rapl_blades'])
comment('Share of ticks with every user-facing core at full speed:', round(imbalanced['uf_full_speed_fraction'], 3))

comment('\nThe first seconds of the timeline:')
comment(result.timeline.iloc[::10].head(10).to_string(index=False))
