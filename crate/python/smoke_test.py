"""Smoke test for the zeta_py extension module.

Build the extension first, then run this script:

    cargo build --release -p zeta-py
    cp target/release/libzeta_py.so python/zeta_py.so
    python3 python/smoke_test.py
"""

import math
import os
import random
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import zeta_py as z  # noqa: E402


def randn(rng, rows, cols):
    return [[rng.gauss(0.0, 1.0) for _ in range(cols)] for _ in range(rows)]


def main():
    rng = random.Random(0)

    assert z.interleave([0b10, 0b01], 2) == 9
    assert z.deinterleave(9, 2, 2) == [2, 1]

    codes = z.encode_batch([[0.1], [-2.0], [0.5]])
    assert [i for _, i in codes] == [0, 1, 2]
    assert sorted(range(3), key=lambda i: codes[i][0]) == [1, 0, 2]

    n, d_k, d_v = 24, 3, 5
    q, k, v = randn(rng, n, d_k), randn(rng, n, d_k), randn(rng, n, d_v)
    params = z.AttentionParams(d_k, d_v, 4, 3)
    assert abs(params.gamma_sq() - 0.5) < 1e-15
    assert params.bits == 21

    sels = z.topk_select(q, k, params)
    for i, sel in enumerate(sels):
        assert all(j < (i // 4) * 4 for j in sel), (i, sel)
        assert len(sel) == min(3, (i // 4) * 4)

    out = z.attend(q, k, v, params)
    assert len(out) == n and all(len(r) == d_v for r in out)
    assert out[0] == v[0]

    full = z.AttentionParams(d_k, d_v, 1, n)
    sparse = z.attend(q, k, v, full)
    dense = z.dense_causal_attention(q, k, v, full, "cauchy")
    diff = max(abs(a - b) for ra, rb in zip(sparse, dense) for a, b in zip(ra, rb))
    assert diff < 1e-12, diff

    _, dq, dk, dv, dtheta = z.attend_backward(q, k, v, out, params)
    assert len(dq) == n and len(dk) == n and len(dv) == n and math.isfinite(dtheta)
    assert z.gradient_check(q, k, v, params) < 1e-5

    rows, nearest, max_dot = z.house_example()
    assert [r[0] for r in rows] == ["House B", "House C", "House D"]
    assert (nearest, max_dot) == ("House B", "House D")

    sweep = z.locality_sweep([1], [128], neighbors=8, trials=1)
    assert sweep[0][3] == 1.0

    recall = z.k_ablation(n=128, d_k=1, chunk_size=16, ks=[4, 8], trials=1)
    assert all(r == 1.0 for _, r in recall)

    trace, acc = z.train_mqar(steps=3, lr=0.0)
    assert len(trace) == 3 and trace[0] == trace[2] and 0.0 <= acc <= 1.0

    try:
        z.AttentionParams(3, 4, 0, 2)
    except ValueError:
        pass
    else:
        raise AssertionError("chunk size 0 accepted")

    print("zeta_py smoke test passed")


if __name__ == "__main__":
    main()
