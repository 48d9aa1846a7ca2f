from __future__ import annotations

import numpy as np

from onpg.rng import StreamRegistry, derive_stream


def test_same_name_and_counters_repeat():
    a = StreamRegistry(5).stream("collect", 3).random(8)
    b = derive_stream(5, "collect", 3).random(8)
    np.testing.assert_array_equal(a, b)


def test_streams_are_distinct():
    reg = StreamRegistry(5)
    draws = [reg.stream("collect", i).random(4).tolist() for i in range(3)]
    draws.append(reg.stream("output").random(4).tolist())
    draws.append(StreamRegistry(6).stream("collect", 0).random(4).tolist())
    assert len({tuple(d) for d in draws}) == len(draws)


def test_stream_does_not_depend_on_call_order():
    reg = StreamRegistry(1)
    first = reg.stream("x").random()
    reg.stream("y").random(100)
    assert reg.stream("x").random() == first
