from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException


class UtilityException(MiniOversubscriptionException):
    pass


class FileException(UtilityException):
    pass


class ConfigurationError(UtilityException):
    def __init__(self, section: str, reason: str, variables: dict):
        self._message = f'\nThe configuration section "{section}" is not valid: {reason}'
        self.description = (f'\nCheck the configuration file against the bundled "fleet.config". Every section is\n'
                            f'validated when the file is loaded, so nothing is simulated with a broken configuration.')
        super().__init__(variables)


class UnknownConfigKeys(ConfigurationError):
    def __init__(self, *keywords: str, section: str, variables: dict):
        """
        :param keywords: all the keys that the keywords_check function marked as not allowed
        :param section: configuration section (or function name) where the keys were found
        :param variables: locals() from where the check was called
        """
        self._keywords = keywords
        super().__init__(section, f'unknown key(s) "{", ".join(sorted(keywords))}".', variables)
        self.description = (f'\nCheck for typos in the key(s). The allowed keys of every section can be seen in the\n'
                            f'bundled "fleet.config".')


class MalformedInput(UtilityException):
    def __init__(self, file_name: str, problems: list, variables: dict):
        self.problems = list(problems)
        self._message = f'\nThe input file "{file_name}" is malformed ({len(self.problems)} problem(s)).'
        self.description = '\n' + '\n'.join(self.problems[:20])
        if len(self.problems) > 20:
            self.description += f'\n... and {len(self.problems) - 20} more.'
        super().__init__(variables)


class FileNotBound(FileException):
    def __init__(self, variables: dict):
        self._message = f'\nNo path is bound to this File yet.'
        self.description = f'\nCall .bind(), .bind_input() or .bind_output() before reading or writing.'
        super().__init__(variables)


class FileNotFound(FileException):
    def __init__(self, file_name: str, variables: dict):
        self._message = f'\nThe file "{file_name}" does not exist.'
        self.description = ''
        super().__init__(variables)
