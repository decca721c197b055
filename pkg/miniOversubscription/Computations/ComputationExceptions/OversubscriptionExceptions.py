from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException


class OversubscriptionException(MiniOversubscriptionException):
    pass


class EmptyLog(OversubscriptionException):
    def __init__(self, variables: dict):
        self._message = f'\nThe allocation log is empty (or all its VMs have zero lifetime).'
        self.description = f'\nHistorical estimates need at least one VM with a positive number of core-hours.'
        super().__init__(variables)


class NoFeasibleBudget(OversubscriptionException):
    def __init__(self, max_draw_w: float, provisioned_w: float, variables: dict):
        self._message = (f'\nNo chassis budget within the provisioned {provisioned_w:.1f} W honors the policy: the '
                         f'highest historical draw is {max_draw_w:.1f} W.')
        self.description = (f'\nEven the candidate that tolerates no capping events lies above the provisioned\n'
                            f'budget. Check the units of the draws file and the provisioned budget.')
        super().__init__(variables)


class InvalidPolicy(OversubscriptionException):
    def __init__(self, reason: str, variables: dict):
        self._message = f'\nThe oversubscription policy is not valid: {reason}'
        self.description = (f'\nEvent-rate maxima are fractions in [0, 1], minimum frequencies lie within\n'
                            f'[0.5, 1.0] and the buffer is a non-negative fraction.')
        super().__init__(variables)


class InvalidDraws(OversubscriptionException):
    def __init__(self, reason: str, variables: dict):
        self._message = f'\nThe historical power draws are not usable: {reason}'
        self.description = (f'\nThe budget search needs at least one reading, and every reading must be a positive\n'
                            f'wattage.')
        super().__init__(variables)
