from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException


class CriticalityException(MiniOversubscriptionException):
    pass


class SeriesTooShort(CriticalityException):
    """Raised when a series does not cover the span an operation needs (two days to de-trend, five to classify)."""
    def __init__(self, slots: int, required_slots: int, variables: dict):
        self._message = f'\nThe utilization series has {slots} slots, but at least {required_slots} are required.'
        self.description = (f'\nDe-trending needs a full preceding 24-hour window, and template matching needs five\n'
                            f'weekdays of data. Shorter workloads cannot be classified; classify() labels them\n'
                            f'user-facing instead of raising this exception.')
        super().__init__(variables)


class InvalidSeries(CriticalityException):
    """Raised when a UtilizationSeries is constructed with values or a cadence it does not support."""
    def __init__(self, reason: str, variables: dict):
        self._message = f'\nThe utilization series is not valid: {reason}'
        self.description = (f'\nA raw series holds CPU utilization fractions in [0, 1], one per slot, and the slot\n'
                            f'length in minutes must divide a day (1440 minutes).')
        super().__init__(variables)


class TemplateMismatch(CriticalityException):
    """Raised when a template period does not tile the series."""
    def __init__(self, period_slots: int, series_slots: int, variables: dict):
        self._message = f'\nA template of {period_slots} slots does not tile a series of {series_slots} slots.'
        self.description = f'\nTemplate periods must divide the series length (use whole days of data).'
        super().__init__(variables)
