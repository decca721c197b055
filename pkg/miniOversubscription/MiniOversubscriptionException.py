def _format_variables(variables: dict) -> str:
    lines = ''.join([str(item) + '\n' for item in variables.items()])
    return f'\n\n {lines}'


class MiniOversubscriptionException(Exception):
    """
    Root of the package's exceptions. Each subpackage keeps its exceptions in its own module. Subclasses set
    _message and description before calling super().__init__(); the variables (usually the raiser's locals()) are
    printed under them.
    """
    def __init__(self, variables: dict):
        if not hasattr(self, '_message') or not hasattr(self, 'description'):
            raise AttributeError('Each subclass of the MiniOversubscriptionException must have both "_message" and '
                                 '"description" variables.')

        self.variables = variables
        self._relevant_variables = _format_variables(variables)
        super().__init__(self._message)

    def __str__(self):
        return self._message + '\n\n' + self.description + '\n\n' + self._relevant_variables


class NotSupposedToHappen(MiniOversubscriptionException):
    def __init__(self, variables: dict):
        self._message = f"\nInternal error: a state the code treats as unreachable was reached."
        self.description = ('\nRaised from the fall-through branch of a dispatch over a closed set of cases,\n'
                            'such as a capping action the chassis manager does not know.')
        super().__init__(variables)
