import numpy as np
import pytest

from tdlab.rng import MASK64, Rng, derive_seed, splitmix64

# published splitmix64 outputs for seed 0
SPLITMIX0 = [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F, 0xF88BB8A8724C81EC]


def test_splitmix64_reference():
    state, outs = 0, []
    for _ in range(4):
        state, out = splitmix64(state)
        outs.append(out)
    assert outs == SPLITMIX0


def xoshiro_ref(s, n):
    # independent uint64 implementation of xoshiro256**
    s = np.array(s, dtype=np.uint64)
    rotl = lambda x, k: (x << np.uint64(k)) | (x >> np.uint64(64 - k))
    out = []
    with np.errstate(over="ignore"):
        for _ in range(n):
            out.append(int(rotl(s[1] * np.uint64(5), 7) * np.uint64(9)))
            t = s[1] << np.uint64(17)
            s[2] ^= s[0]
            s[3] ^= s[1]
            s[1] ^= s[2]
            s[0] ^= s[3]
            s[2] ^= t
            s[3] = rotl(s[3], 45)
    return out


def test_xoshiro_matches_reference():
    r = Rng(0)
    assert [r.next_u64() for _ in range(50)] == xoshiro_ref(SPLITMIX0, 50)


def test_determinism_and_streams():
    a, b = Rng(42), Rng(42)
    assert [a.next_u64() for _ in range(10)] == [b.next_u64() for _ in range(10)]
    assert derive_seed(1, "init") == derive_seed(1, "init")
    assert derive_seed(1, "init") != derive_seed(1, "batch")
    assert derive_seed(1, "init") != derive_seed(2, "init")
    assert 0 <= derive_seed(3, "x", 7) <= MASK64
    assert Rng(5).spawn("a").next_u64() == Rng(derive_seed(5, "a")).next_u64()


def test_ranges():
    r = Rng(1)
    u = r.uniform(-2.0, 3.0, size=1000)
    assert u.min() >= -2.0 and u.max() < 3.0
    ints = r.integers(7, 5000)
    assert set(ints.tolist()) == set(range(7))
    # each bucket within 4 sigma of 5000/7
    counts = np.bincount(ints, minlength=7)
    assert np.all(np.abs(counts - 5000 / 7) < 4 * np.sqrt(5000 * (1 / 7) * (6 / 7)))
    with pytest.raises(ValueError):
        r.integer(0)


def test_normal_moments():
    x = Rng(2).normal(20_000)
    assert abs(x.mean()) < 4 / np.sqrt(20_000)
    assert abs(x.var() - 1) < 0.05
    assert Rng(2).normal((3, 2)).shape == (3, 2)


def test_permutation_and_sampling():
    r = Rng(3)
    assert sorted(r.permutation(20).tolist()) == list(range(20))
    s = r.sample_without_replacement(10, 10)
    assert sorted(s.tolist()) == list(range(10))
    assert len(set(r.sample_without_replacement(100, 30).tolist())) == 30
    with pytest.raises(ValueError):
        r.sample_without_replacement(3, 4)


def test_choice():
    r = Rng(4)
    assert all(r.choice([0.0, 1.0, 0.0]) == 1 for _ in range(100))
    draws = [r.choice([0.25, 0.75]) for _ in range(4000)]
    assert abs(np.mean(draws) - 0.75) < 4 * np.sqrt(0.75 * 0.25 / 4000)
