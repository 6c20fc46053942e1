import numpy as np
import pytest

from errors import DimensionError, NumericError, UsageError
from tensor import (
    Graph,
    Tensor,
    backward,
    channel_split,
    check_gradients,
    concat,
    conv2d,
    crop,
    depth_to_space,
    global_avg_pool,
    grad_check,
    layer_norm,
    max_pool,
    mean_all,
    mul,
    nearest_upsample,
    pixel_shuffle,
    pixel_unshuffle,
    reflect_pad,
    space_to_depth,
    sum_all,
    watch_argmax,
)


def naive_conv(x, w, b, groups):
    n, cin, h, wd = x.shape
    cout, cin_g, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    og = cout // groups
    out = np.zeros((n, cout, h, wd))
    for bi in range(n):
        for o in range(cout):
            g = o // og
            for i in range(h):
                for j in range(wd):
                    acc = b[0, o, 0, 0] if b is not None else 0.0
                    for ci in range(cin_g):
                        acc += np.sum(xp[bi, g * cin_g + ci, i:i + k, j:j + k] * w[o, ci])
                    out[bi, o, i, j] = acc
    return out


def test_tensor_is_immutable_and_rank4():
    t = Tensor(np.zeros((1, 2, 3, 3)))
    with pytest.raises(ValueError):
        t.data[0, 0, 0, 0] = 1.0
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 3)))


def test_dtype_follows_request():
    assert Tensor(np.zeros((1, 1, 1, 1)), dtype="single").dtype == np.float32
    assert Tensor(np.zeros((1, 1, 1, 1), dtype=np.float32)).dtype == np.float32
    assert Tensor([[[[1]]]]).dtype == np.float64


def test_conv2d_matches_naive_loops():
    rng = np.random.default_rng(0)
    for case in range(200):
        groups = [1, 1, 2, 4][case % 4]
        cin = groups * int(rng.integers(1, 3))
        cout = groups * int(rng.integers(1, 3))
        k = [1, 3][case % 2]
        x = rng.standard_normal((int(rng.integers(1, 3)), cin, int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        w = rng.standard_normal((cout, cin // groups, k, k))
        b = rng.standard_normal((1, cout, 1, 1)) if case % 3 else None
        got = conv2d(Tensor(x), Tensor(w), Tensor(b) if b is not None else None, groups=groups).data
        want = naive_conv(x, w, b, groups)
        assert np.allclose(got, want, rtol=1e-6, atol=1e-12)


def test_conv2d_rejects_bad_groups():
    x = Tensor(np.zeros((1, 6, 4, 4)))
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.zeros((4, 2, 3, 3))), groups=4)


def test_layer_norm_statistics():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 8, 5, 5)) * 3 + 1)
    out = layer_norm(x, Tensor(np.ones((1, 8, 1, 1))), Tensor(np.zeros((1, 8, 1, 1)))).data
    assert np.allclose(out.mean(axis=1), 0.0, atol=1e-10)
    assert np.allclose(out.var(axis=1), 1.0, atol=1e-4)


def test_global_avg_pool_and_max_pool():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    assert global_avg_pool(Tensor(x)).data.item() == pytest.approx(7.5)
    pooled = max_pool(Tensor(x), 2).data[0, 0]
    assert pooled.tolist() == [[5.0, 7.0], [13.0, 15.0]]
    with pytest.raises(DimensionError):
        max_pool(Tensor(x), 3)


def test_max_pool_tie_goes_to_first_in_scan_order():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    backward(sum_all(max_pool(x, 2)))
    assert x.grad[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_nearest_upsample_repeats():
    x = Tensor(np.array([[[[1.0, 2.0]]]]))
    assert nearest_upsample(x, 2).data[0, 0].tolist() == [[1, 1, 2, 2], [1, 1, 2, 2]]


def test_pixel_shuffle_layout():
    r = 2
    x = np.arange(8, dtype=float).reshape(1, 8, 1, 1)
    out = pixel_shuffle(Tensor(x), r).data
    assert out.shape == (1, 2, 2, 2)
    for c in range(2):
        for dy in range(r):
            for dx in range(r):
                assert out[0, c, dy, dx] == x[0, c * r * r + dy * r + dx, 0, 0]


def test_shuffle_and_split_round_trips_are_exact():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 12, 6, 6))
    assert np.array_equal(pixel_unshuffle(pixel_shuffle(Tensor(x), 2), 2).data, x)
    assert np.array_equal(pixel_shuffle(pixel_unshuffle(Tensor(x), 3), 3).data, x)
    assert np.array_equal(depth_to_space(space_to_depth(Tensor(x), 2), 2).data, x)
    assert np.array_equal(concat(channel_split(Tensor(x), 4)).data, x)


def test_space_to_depth_channel_order():
    x = np.arange(2 * 4 * 4, dtype=float).reshape(1, 2, 4, 4)
    out = space_to_depth(Tensor(x), 2).data
    c = 2
    for dy in range(2):
        for dx in range(2):
            k = dy * 2 + dx
            for ch in range(c):
                assert np.array_equal(out[0, k * c + ch], x[0, ch, dy::2, dx::2])


def test_channel_split_requires_divisibility():
    with pytest.raises(DimensionError):
        channel_split(Tensor(np.zeros((1, 6, 2, 2))), 4)


def test_reflect_pad_and_crop():
    x = np.arange(6, dtype=float).reshape(1, 1, 2, 3)
    padded = reflect_pad(Tensor(x), 1, 2).data[0, 0]
    assert padded.tolist() == [[0, 1, 2, 1, 0], [3, 4, 5, 4, 3], [0, 1, 2, 1, 0]]
    assert np.array_equal(crop(reflect_pad(Tensor(x), 5, 5), 2, 3).data, x)


def test_backward_accumulates_on_fan_out():
    a = Tensor(np.full((1, 1, 1, 1), 3.0), requires_grad=True)
    out = mul(a, a)
    grads = backward(out)
    assert grads[a].item() == pytest.approx(6.0)
    assert a.grad.item() == pytest.approx(6.0)


def test_backward_needs_seed_for_non_scalar():
    a = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
    with pytest.raises(UsageError):
        backward(mul(a, a))
    grads = backward(mul(a, a), seed_grad=np.ones((1, 2, 2, 2)))
    assert np.allclose(grads[a], 2.0)


def test_graph_records_topological_order():
    a = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    out = sum_all(mul(a, b))
    graph = Graph.trace(out)
    records = graph.records()
    assert records[-1][0] == "sum"
    for i, (_, parents) in enumerate(records):
        assert all(p < i for p in parents)
    assert graph.leaves() == [a, b]


def test_non_finite_values_raise():
    big = Tensor(np.full((1, 1, 1, 1), 1e308))
    with pytest.raises(NumericError):
        mul(big, big)


def test_grad_check_conv_layernorm_mul():
    rng = np.random.default_rng(3)
    x, w, b = (Tensor(rng.standard_normal(s)) for s in [(2, 4, 5, 5), (4, 2, 3, 3), (1, 4, 1, 1)])
    weight = Tensor(rng.standard_normal((2, 4, 5, 5)))
    err = grad_check(lambda x, w, b: sum_all(mul(conv2d(x, w, b, groups=2), weight)), [x, w, b])
    assert err < 1e-5

    g, beta = Tensor(1 + 0.1 * rng.standard_normal((1, 4, 1, 1))), Tensor(rng.standard_normal((1, 4, 1, 1)))
    err = grad_check(lambda x, g, beta: sum_all(mul(layer_norm(x, g, beta), weight)), [x, g, beta])
    assert err < 1e-5

    gate = Tensor(rng.standard_normal((2, 4, 1, 1)))
    err = grad_check(lambda x, gate: sum_all(mul(mul(x, gate), weight)), [x, gate])
    assert err < 1e-5


def test_grad_check_structural_ops():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((1, 8, 4, 6)))
    weight = Tensor(rng.standard_normal((1, 8, 4, 6)))

    def f(x):
        left, right = channel_split(x, 2)
        y = pixel_shuffle(concat([space_to_depth(left, 2), pixel_unshuffle(right, 2)]), 2)
        y = crop(reflect_pad(y, 3, 2), 4, 6)
        z = nearest_upsample(global_avg_pool(y), 2)
        return mean_all(mul(y, weight)) + mean_all(z)

    assert grad_check(f, [x]) < 1e-5


def test_grad_check_detects_wrong_gradient():
    from tensor import record

    def bad_square(a):
        return record("bad", a.data * a.data, [a], lambda g: (g * a.data,))

    x = Tensor(np.array([[[[1.5]]]]))
    assert grad_check(lambda a: sum_all(bad_square(a)), [x]) > 0.1


def test_kink_guard_skips_coordinates_near_pooling_ties():
    # only the top-left window is within a step of a tie
    x = np.array([[[[1.0, 1.0 + 1e-7, 0.7, 0.1],
                    [0.2, 0.3, 0.4, 0.6],
                    [0.15, 0.55, 0.9, 0.1],
                    [0.35, 0.8, 0.5, 0.45]]]])
    weight = Tensor(np.array([[[[1.0, -2.0], [0.5, 3.0]]]]))

    def f(a):
        return sum_all(mul(max_pool(a, 2), weight))

    assert grad_check(f, [Tensor(x)]) > 0.1
    guarded = check_gradients(f, [Tensor(x)], kink_guard=10.0)
    assert guarded.skipped == 2
    assert guarded.checked == 14
    assert guarded.max_rel_error < 1e-6


def test_watch_argmax_records_each_pool():
    x = Tensor(np.arange(32, dtype=np.float64).reshape(1, 2, 4, 4))
    with watch_argmax() as chosen:
        max_pool(x, 2)
        max_pool(x, 4)
    assert len(chosen) == 2
    assert chosen[0].shape == (1, 2, 2, 2, 1)
    assert np.all(chosen[0] == 3) and np.all(chosen[1] == 15)
    max_pool(x, 2)
    assert len(chosen) == 2
