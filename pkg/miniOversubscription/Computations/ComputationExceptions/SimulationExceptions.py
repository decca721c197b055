from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException


class SimulationException(MiniOversubscriptionException):
    pass


class InvalidDistribution(SimulationException):
    def __init__(self, name: str, reason: str, variables: dict):
        self._message = f'\nThe trace distribution "{name}" is not valid: {reason}'
        self.description = (f'\nEvery distribution is a list of [value or [low, high], mass] pairs whose masses are\n'
                            f'non-negative and sum to 1 (within 1e-6).')
        super().__init__(variables)


class InvalidTrace(SimulationException):
    def __init__(self, reason: str, variables: dict):
        self._message = f'\nThe trace cannot be used: {reason}'
        self.description = ''
        super().__init__(variables)
