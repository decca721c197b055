"""Label two 5-day utilization series: a web front end that follows the time of day and a batch job that keeps
the cores busy around the clock. The classifier compares how well a 24-hour template fits each series against an
8-hour one."""

from miniOversubscription.EXAMPLES import comment


comment('Importing necessary modules...')
import numpy as np
from miniOversubscription.Core.Criticality import UtilizationSeries, classify


rng = np.random.default_rng(3)
t = np.arange(5 * 48)

comment('Creating a diurnal series at a 30-minute cadence: 0.5 + 0.3 sin(2 pi t / 24 h) plus a little noise...')
web = UtilizationSeries(np.clip(0.5 + 0.3 * np.sin(2 * np.pi * t / 48) + rng.normal(0, 0.02, t.size), 0, 1))

comment('Creating a batch series: busy, with noise and no daily pattern...')
batch = UtilizationSeries(np.clip(0.8 + rng.normal(0, 0.1, t.size), 0, 1))

for name, series in (('web front end', web), ('batch job', batch)):
    label, scores = classify(series)
    comment(f'\n{name}: {label.value}')
    comment(f'  compare8  = {scores.compare8:.4f} (user-facing below 0.72)')
    comment(f'  compare12 = {scores.compare12:.4f}')

comment('\nA series shorter than 5 days cannot be scored and is treated as user-facing:')
label, scores = classify(UtilizationSeries(web.values[:3 * 48]))
comment(label.value, '(too short)' if scores.too_short else '')
