from typing import Any, Dict, List
from ensure import check  # type: ignore

from bubblesim.errors import ConfigError


def parse_int(v: Any, key: str) -> int:
    check(v).is_a(int).or_raise(
        lambda _: ConfigError(f"Tried to read {v!r} as int for '{key}'"))
    if isinstance(v, bool):
        raise ConfigError(f"Tried to read {v!r} as int for '{key}'")
    assert isinstance(v, int)
    return v

def parse_float(v: Any, key: str) -> float:
    # YAML writes 1.0 as 1
    check(v).is_a((int, float)).or_raise(
        lambda _: ConfigError(f"Tried to read {v!r} as float for '{key}'"))
    if isinstance(v, bool):
        raise ConfigError(f"Tried to read {v!r} as float for '{key}'")
    return float(v)

def parse_str(v: Any, key: str) -> str:
    check(v).is_a(str).or_raise(
        lambda _: ConfigError(f"Tried to read {v!r} as str for '{key}'"))
    assert isinstance(v, str)
    return v

def parse_bool(v: Any, key: str) -> bool:
    check(v).is_a(bool).or_raise(
        lambda _: ConfigError(f"Tried to read {v!r} as bool for '{key}'"))
    assert isinstance(v, bool)
    return v

def parse_float_list(v: Any, key: str) -> List[float]:
    check(v).is_a(list).or_raise(
        lambda _: ConfigError(f"Tried to read {v!r} as list for '{key}'"))
    assert isinstance(v, list)
    return [parse_float(item, f"{key}[{index}]") for index, item in enumerate(v)]

def parse_dict_str_any(v: Any, key: str) -> Dict[str, Any]:
    check(v).is_a(dict).or_raise(
        lambda _: ConfigError(f"Tried to read {v!r} as mapping for '{key}'"))
    assert isinstance(v, dict)
    for name in v.keys():
        parse_str(name, f"{key} key")
    return v

def reject_unknown_keys(v: Dict[str, Any], known: List[str], key: str) -> None:
    unknown = sorted(set(v) - set(known))
    if len(unknown) > 0:
        raise ConfigError(f"Unknown keys {unknown} in '{key}', expected some of {sorted(known)}")
