import math
from typing import Union

import numpy as np

ArrayOrFloat = Union[float, np.ndarray]


def db_to_linear(value_db: ArrayOrFloat) -> ArrayOrFloat:
    """
    Converts a power ratio in dB to a linear ratio
    :param value_db: Ratio in dB
    :return: Linear ratio
    """
    if isinstance(value_db, np.ndarray):
        return np.power(10.0, value_db / 10.0)
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: ArrayOrFloat) -> ArrayOrFloat:
    """
    Converts a linear power ratio to dB, zero maps to -inf
    :param value: Linear ratio
    :return: Ratio in dB
    """
    if isinstance(value, np.ndarray):
        with np.errstate(divide='ignore'):
            return 10.0 * np.log10(value)
    return 10.0 * math.log10(value) if value > 0 else -math.inf


def dbm_to_watt(power_dbm: ArrayOrFloat) -> ArrayOrFloat:
    """
    Converts a power in dBm to watts
    :param power_dbm: Power in dBm
    :return: Power in W
    """
    return db_to_linear(power_dbm) * 1e-3


def watt_to_dbm(power_w: ArrayOrFloat) -> ArrayOrFloat:
    """
    Converts a power in watts to dBm, zero maps to -inf
    :param power_w: Power in W
    :return: Power in dBm
    """
    return linear_to_db(power_w * 1e3)


def format_float(value: float) -> str:
    """
    Formats a float for CSV output so it reads back bit-exactly
    :param value: Value to format
    :return: Shortest round-trip decimal representation, 'inf', '-inf' or 'nan'
    """
    if value is None:
        return ''
    value = float(value)
    if math.isnan(value):
        return 'nan'
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return repr(value)


def sanitize_string(string: str) -> str:
    """
    Makes a label usable as a file name component by replacing path separators and spaces
    :param string: Input string
    :return: Sanitized string
    """
    if string is None:
        return ''
    for char in ('/', '\\', ':', '*', '?', '<', '>', '"', '|', ' '):
        string = string.replace(char, '-')
    return string.strip('.-')
