import math

import numpy as np
import pytest

from batchpost.jsonio import dumps_canonical, format_float


def test_sorted_keys_and_fixed_floats():
    doc = {"b": 1.0 / 3.0, "a": 1, "c": [1.5, 2, None, True]}
    assert dumps_canonical(doc) == '{"a":1,"b":0.333333,"c":[1.5,2,null,true]}'


def test_float_formatting():
    assert format_float(0.0) == "0"
    assert format_float(-0.0) == "0"
    assert format_float(1e12) == "1e+12"
    assert format_float(123456789.0) == "1.23457e+08"
    assert format_float(0.1) == "0.1"
    assert format_float(2.0, precision=17) == "2"


def test_numpy_scalars_and_arrays():
    doc = {"x": np.float64(0.25), "n": np.int64(7), "v": np.array([1.0, 2.0])}
    assert dumps_canonical(doc) == '{"n":7,"v":[1,2],"x":0.25}'


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        dumps_canonical({"x": math.nan})
    with pytest.raises(ValueError):
        dumps_canonical([math.inf])


def test_string_escaping():
    assert dumps_canonical({"s": 'a"b\n'}) == '{"s":"a\\"b\\n"}'


def test_unsupported_type():
    with pytest.raises(TypeError):
        dumps_canonical({"x": object()})
    with pytest.raises(TypeError):
        dumps_canonical({1: "non-string key"})
