import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Callable, Union

import numpy as np

log = logging.getLogger(__name__)


def flatten_dictionary(input_dict: dict, parent_key: str = '', sep: str = '.') -> dict:
    """
    Recursively flattens a nested dictionary by concatenating keys using a specified separator.

    Parameters:
    - input_dict (dict): The input dictionary to be flattened.
    - parent_key (str, optional): The concatenated key from the parent dictionary. Default is an empty string.
    - sep (str, optional): The separator used between keys when concatenating. Default is a dot ('.').

    Returns:
    dict: A new dictionary with flattened keys.
    """
    flattened_dict = {}

    for key, value in input_dict.items():
        new_key = f"{parent_key}{sep}{key}" if parent_key else key

        if isinstance(value, dict):
            flattened_dict.update(flatten_dictionary(value, new_key, sep))
        else:
            flattened_dict[new_key] = value

    return flattened_dict


def set_dotted(target: dict, dotted_key: str, value: Any, sep: str = '.') -> None:
    """
    Sets a value inside a nested dictionary addressed by a dotted key, creating tables on the way
    :param target: Dictionary to modify in place
    :param dotted_key: Key like 'selection.L'
    :param value: Value to set
    :param sep: Key separator
    :return: None
    """
    parts = dotted_key.split(sep)
    node = target
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def fingerprint(payload: Any) -> str:
    """
    Returns a stable sha224 hex digest for a JSON serializable payload, keys are sorted so dictionary order does not
    matter and floats are written with full precision
    :param payload: Data to hash
    :return: Hex digest
    """
    canonical: str = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=_json_default)
    return hashlib.sha224(canonical.encode()).hexdigest()


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        # Arrays are hashed by content, not by repr which truncates
        return {'__ndarray__': hashlib.sha224(np.ascontiguousarray(obj).tobytes()).hexdigest(),
                'shape': list(obj.shape), 'dtype': str(obj.dtype)}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f'Object of type "{type(obj)}" is not fingerprintable')


def cached_arrays(cache_dir: Union[str, None], key: str, builder: Callable[[], dict]) -> tuple[dict, bool]:
    """
    Calls builder() while caching the returned arrays in a .npz file named after key in the cache directory
    :param cache_dir: Where the cache should be stored, None disables the cache
    :param key: Fingerprint identifying the content, a cache hit requires an exact match
    :param builder: Function returning a dict of numpy arrays/scalars
    :return: (arrays, True if they came from the cache)
    """
    cache_file: str = ''
    if cache_dir is not None:
        cache_dir = os.path.join(os.path.abspath(cache_dir), 'kernel_cache')
        os.makedirs(cache_dir, exist_ok=True)
        cache_file = os.path.join(cache_dir, f'{key}.npz')
        if os.path.isfile(cache_file):
            with np.load(cache_file, allow_pickle=False) as stored:
                if str(stored['fingerprint']) == key:
                    log.debug('Cache hit for %s', key)
                    return {name: stored[name] for name in stored.files if name != 'fingerprint'}, True
            log.warning('Cache file %s does not match its fingerprint, rebuilding', cache_file)
    arrays: dict = builder()
    if cache_file:
        # Write to a temporary name first so a concurrent reader never sees half a file
        temp_name: str = cache_file + f'.{os.getpid()}.tmp.npz'
        np.savez(temp_name, fingerprint=np.array(key), **arrays)
        os.replace(temp_name, cache_file)
    return arrays, False


def derive_seed(*keys: int) -> int:
    """
    Derives an independent 64 bit seed from a tuple of integer keys
    :param keys: Integers, usually a master seed followed by indices
    :return: 64 bit seed
    """
    return int(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]).generate_state(1, np.uint64)[0])


def progress_enabled() -> bool:
    """
    Returns True when progress bars were requested through PBSSLIB_PROGRESS
    :return: bool
    """
    return int(os.environ.get('PBSSLIB_PROGRESS', 0)) != 0


class MutableBool:
    def __init__(self, value: bool = False):
        self.__value = None
        self.set(bool(value))

    def set(self, value: bool):
        self.__value = bool(value)

    def __bool__(self):
        return self.__value

    def __int__(self):
        return 1 if self.__value else 0
