from typing import Union, Iterable, Sequence, Sized
import math

from miniOversubscription.Utilities.UtilityExceptions import UnknownConfigKeys, ConfigurationError


DISTRIBUTION_TOLERANCE = 1e-6


def type_check(parameters: list, types: list, strict_order: bool = False, raise_exception: bool = False) -> bool:
    """
    Type check for values that did not pass through annotated code: configuration values, JSON, CSV cells.

    :param parameters: values to check.
    :param types: accepted types.
    :param strict_order: if True, each parameter is matched to the type at the same position (type_check([a, b],
    [int, float], strict_order=True) means isinstance(a, int) and isinstance(b, float)). If False, every parameter
    may be of any of the types.
    :raises TypeError: on the first mismatch, when raise_exception is set.
    """

    pairs = zip(parameters, types) if strict_order else [(p, tuple(types)) for p in parameters]

    for p, t in pairs:
        # bool is an int subclass, a JSON "true" must never pass as a number
        if isinstance(p, bool) and bool not in (t if isinstance(t, tuple) else (t,)):
            ok = False
        else:
            ok = isinstance(p, t)

        if not ok:
            if raise_exception:
                raise TypeError(f'Parameter with value "{p}" has wrong type. Expected one of the '
                                f'{types}, got {type(p)}.')
            return False

    return True


def keywords_check(keywords: Iterable[str], allowed_keywords: Iterable[str], section: str, variables: dict,
                   raise_exception: bool = True) -> bool:
    """
    Rejects configuration keys outside allowed_keywords with UnknownConfigKeys naming the section they were found
    in. variables are the caller's locals(), kept on the exception.
    """

    keyword_difference = set(keywords).difference(set(allowed_keywords))

    if keyword_difference:
        if raise_exception:
            raise UnknownConfigKeys(*keyword_difference, section=section, variables=variables)
        return False
    return True


def fraction_check(value: float, name: str, section: str = 'value', raise_exception: bool = True,
                   low: float = 0.0, high: float = 1.0) -> bool:
    """Checks that a number lies in [low, high] (the unit interval by default) and is not NaN."""

    if isinstance(value, (int, float)) and not isinstance(value, bool) and not math.isnan(value) \
            and low <= value <= high:
        return True
    if raise_exception:
        raise ConfigurationError(section, f'"{name}" must be within [{low}, {high}], got {value}.',
                                 variables={'name': name, 'value': value})
    return False


def positive_check(value: float, name: str, section: str = 'value', strict: bool = True,
                   raise_exception: bool = True) -> bool:
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and (value > 0 if strict else value >= 0)

    if ok:
        return True
    if raise_exception:
        relation = '> 0' if strict else '>= 0'
        raise ConfigurationError(section, f'"{name}" must be {relation}, got {value}.',
                                 variables={'name': name, 'value': value})
    return False


def count_check(items: Sized, expected: int, name: str, section: str = 'value', raise_exception: bool = True) -> bool:
    if len(items) == expected:
        return True
    if raise_exception:
        raise ConfigurationError(section, f'"{name}" needs {expected} entries, got {len(items)}.',
                                 variables={'name': name, 'expected': expected, 'got': len(items)})
    return False


def distribution_check(masses: Union[Sequence[float], Iterable[float]], name: str,
                       raise_exception: bool = True) -> bool:
    """
    Checks that a discrete distribution is valid: no negative masses, and the masses sum to 1 within
    DISTRIBUTION_TOLERANCE. The exception raised is a ConfigurationError; callers that need a more specific one
    (the trace generator raises InvalidDistribution) call this with raise_exception=False.
    """

    masses = list(masses)
    valid = bool(masses) and all(m >= 0 for m in masses) and abs(sum(masses) - 1.0) <= DISTRIBUTION_TOLERANCE

    if valid:
        return True
    if raise_exception:
        raise ConfigurationError(name, f'masses {masses} do not form a distribution (sum {sum(masses)}).',
                                 variables=locals())
    return False
