from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException


class PowerModelException(MiniOversubscriptionException):
    pass


class InvalidPowerSpec(PowerModelException):
    def __init__(self, reason: str, variables: dict):
        self._message = f'\nThe server power specification is not valid: {reason}'
        self.description = (f'\nA specification needs idle_w < peak_w, 0 < f_min <= f_max = 1.0 and a positive\n'
                            f'dynamic exponent.')
        super().__init__(variables)


class UnknownPState(PowerModelException):
    def __init__(self, frequency: float, variables: dict):
        self._message = f'\nThe frequency {frequency} is not on the p-state ladder.'
        self.description = f'\nUse snap_to_ladder() to move a frequency onto the nearest lower p-state.'
        super().__init__(variables)


class CalibrationFailed(PowerModelException):
    def __init__(self, reason: str, variables: dict):
        self._message = f'\nThe dynamic exponent could not be calibrated: {reason}'
        self.description = (f'\nCalibration needs idle_w < reduced_peak_w < peak_w and a reduced frequency strictly\n'
                            f'between 0 and 1.')
        super().__init__(variables)
