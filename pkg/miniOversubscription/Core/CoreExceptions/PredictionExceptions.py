from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException


class PredictionException(MiniOversubscriptionException):
    pass


class UnknownProvider(PredictionException):
    def __init__(self, name: str, known: list, variables: dict):
        self._message = f'\nThere is no prediction provider called "{name}".'
        self.description = f'\nThe known providers are: {", ".join(known)}.'
        super().__init__(variables)


class InvalidFeatures(PredictionException):
    def __init__(self, reason: str, variables: dict):
        self._message = f'\nThe VM features are not valid: {reason}'
        self.description = (f'\nAll percentages are fractions in [0, 1] and the four utilization-bucket fractions of\n'
                            f'the subscription must sum to 1.')
        super().__init__(variables)


class InvalidConfusionMatrix(PredictionException):
    def __init__(self, reason: str, variables: dict):
        self._message = f'\nThe bucket confusion matrix is not valid: {reason}'
        self.description = (f'\nThe matrix must be 4x4, row i being the distribution of the predicted bucket when the\n'
                            f'true bucket is i + 1. Every row sums to 1.')
        super().__init__(variables)
