"""
Walkthroughs of the package. Each one prints what it does, step by step, and pauses SETTINGS.READ_TIME seconds after
every message so that it can be followed while it runs.

    >>> from miniOversubscription.EXAMPLES import run_example, EXAMPLE_LIST, SETTINGS
    >>> SETTINGS.READ_TIME = 1
    >>> run_example(EXAMPLE_LIST.WORKED_BUDGET)

READ_TIME = 0 disables the pauses.
"""

from dataclasses import dataclass
from pathlib import Path
from time import sleep, perf_counter


@dataclass
class SETTINGS:
    SHOW_EXECUTION_TIME: bool = True
    READ_TIME: float = 0  # seconds


class EXAMPLE_LIST:
    WORKED_BUDGET: str = 'Ex1_Worked_budget'
    CHASSIS_EXPERIMENT: str = 'Ex2_Chassis_experiment'
    CLASSIFY_WORKLOADS: str = 'Ex3_Classify_workloads'

    @classmethod
    def names(cls) -> list:
        return [value for key, value in vars(cls).items() if key.isupper()]


CODE_DIRECTORY = Path(__file__).parent / '_Code'

OVERVIEW = """
> WORKED_BUDGET. The budget search on a 10,000-reading draw history, candidate by candidate.
> CHASSIS_EXPERIMENT. One chassis under a tight budget with balanced and imbalanced VM placements: why the scheduler
mixes user-facing and non-user-facing VMs on every server.
> CLASSIFY_WORKLOADS. Labels a diurnal and a flat utilization series by how periodic they are.
"""


def comment(*texts, sep=' ', end='\n', no_delay: bool = False, custom_delay: float = 0) -> None:
    """print() followed by the reading pause (custom_delay overrides READ_TIME when pauses are on)."""

    print(*texts, sep=sep, end=end)
    if SETTINGS.READ_TIME <= 0 or no_delay:
        return
    sleep(custom_delay if custom_delay > 0 else SETTINGS.READ_TIME)


def describe(file_name: str) -> str:
    """The docstring at the top of an example: what it shows."""
    code = (CODE_DIRECTORY / f'{file_name}.py').read_text()
    return code.strip().strip('"""').split('"""')[0].strip()


def run_example(file_name: str, enter_after_doc: bool = True) -> None:
    """
    Prints the description of the example and runs its code.

    :param enter_after_doc: wait for "Enter" between the description and the code.
    :raises FileNotFoundError: if file_name is not one of EXAMPLE_LIST.
    """

    file = CODE_DIRECTORY / f'{file_name}.py'
    if not file.exists():
        raise FileNotFoundError(f'There is no example called "{file_name}". Available: '
                                f'{", ".join(EXAMPLE_LIST.names())}.')

    number = file_name.removeprefix('Ex').split('_')[0]
    comment('This example shows the following:\n\n', describe(file_name), '\n', no_delay=True)
    if enter_after_doc:
        input('Press "Enter" to continue >>> ')

    print(f'\n----- ====== RUNNING EXAMPLE {number} ====== ------')
    start = perf_counter()
    exec(compile(file.read_text(), str(file), 'exec'), {'__name__': f'{__name__}._Code.{file_name}'})
    print('\n----- ====== Done running the example code. ====== ------')
    if SETTINGS.SHOW_EXECUTION_TIME:
        print(f'({perf_counter() - start:.1f} s)')
