from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException


class CappingException(MiniOversubscriptionException):
    pass


class InfeasibleBudget(CappingException):
    """
    Raised when a power cap cannot be met even with every core at the minimum p-state. In practice this signals a
    misconfigured budget, e.g. an even share below the idle power of a blade.
    """
    def __init__(self, where: str, cap_w: float, floor_w: float, variables: dict):
        self.where = where
        self.cap_w = cap_w
        self.floor_w = floor_w
        self._message = f'\nThe power cap of {cap_w:.1f} W for {where} is below the reachable floor of {floor_w:.1f} W.'
        self.description = (f'\nEven with all cores at the minimum p-state the server draws more than its cap. Raise\n'
                            f'the chassis budget (the even share of a blade can never be below its idle power).')
        super().__init__(variables)


class InvalidCappingConfig(CappingException):
    def __init__(self, reason: str, variables: dict):
        self._message = f'\nThe capping configuration is not valid: {reason}'
        self.description = ''
        super().__init__(variables)
