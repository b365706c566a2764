import pytest

from fedcast import signals
from fedcast.errors import PartitionError
from fedcast.partitioning import (PartitionSpec, build_s1, build_s2, build_s3, default_site_sizes,
                                  manifest_table, synthetic_sites)
from fedcast.signals import Modality, Morphology

SPEC = PartitionSpec(l_ctx=16, l_hor=4, stride=4, steps_per_round=5, batch_size=4)


def pool(n, modality=Modality.ECG, n_samples=120, offset=0):
    return [signals.generate_synthetic(modality, offset + k, n_samples, Morphology(),
                                       subject_id=f"{modality.value}-{offset + k}")
            for k in range(n)]


def _sources(client):
    return {w.source for w in client.train_windows + client.test_windows}


class TestS1:
    def test_thirty_subjects_twenty_clients(self):
        clients = build_s1(pool(30), SPEC)
        counts = sorted(len(_sources(c)) for c in clients)
        assert counts == [1] * 10 + [2] * 10
        assert len({c.n_train for c in clients}) == 1

    def test_subjects_not_shared(self):
        clients = build_s1(pool(30), SPEC)
        seen = [s for c in clients for s in _sources(c)]
        assert len(seen) == len(set(seen)) == 30

    def test_train_before_test_per_subject(self):
        for c in build_s1(pool(20), SPEC):
            for src in _sources(c):
                tr = [w.offset for w in c.train_windows if w.source == src]
                te = [w.offset for w in c.test_windows if w.source == src]
                assert max(tr) < min(te)

    def test_pool_too_small(self):
        with pytest.raises(PartitionError):
            build_s1(pool(1), PartitionSpec(n_clients=2, l_ctx=16, l_hor=4, stride=4))

    def test_rejects_icg(self):
        with pytest.raises(PartitionError):
            build_s1(pool(20) + pool(1, Modality.ICG), SPEC)

    def test_deterministic(self):
        a, b = build_s1(pool(25), SPEC), build_s1(pool(25), SPEC)
        assert [[w.sort_key() for w in c.train_windows] for c in a] == \
               [[w.sort_key() for w in c.train_windows] for c in b]

    def test_series_too_short(self):
        with pytest.raises(PartitionError):
            build_s1(pool(20, n_samples=10), SPEC)


class TestS3:
    def test_nineteen_plus_one(self):
        clients = build_s3(pool(28), pool(2, Modality.ICG), SPEC)
        mods = [c.modality for c in clients]
        assert mods == [Modality.ECG] * 19 + [Modality.ICG]
        icg = clients[-1]
        assert all(w.modality is Modality.ICG for w in icg.train_windows + icg.test_windows)
        assert len({c.n_train for c in clients}) == 1

    def test_minimum(self):
        spec = PartitionSpec(n_clients=2, l_ctx=16, l_hor=4, stride=4)
        clients = build_s3(pool(1), pool(1, Modality.ICG), spec)
        assert [c.modality for c in clients] == [Modality.ECG, Modality.ICG]

    def test_empty_icg(self):
        with pytest.raises(PartitionError):
            build_s3(pool(20), [], SPEC)


class TestS2:
    def test_default_sizes_heavy_tailed(self):
        for seed in range(5):
            sizes = default_site_sizes(20, seed)
            assert min(sizes) == 10 and max(sizes) == 8910
            assert max(sizes) / min(sizes) >= 100
        assert default_site_sizes(20, 3) == default_site_sizes(20, 3)

    def test_sizes_become_steps(self):
        sizes = (10, 25, 40)
        spec = PartitionSpec(n_clients=3, l_ctx=16, l_hor=4, stride=4, site_sizes=sizes)
        clients = build_s2(synthetic_sites(sizes, spec, 0, n_samples=200), spec)
        assert [c.n_train for c in clients] == list(sizes)
        assert [c.steps_per_round for c in clients] == list(sizes)
        assert all(c.n_test >= 1 for c in clients)

    def test_equal_sizes(self):
        sizes = (12,) * 4
        spec = PartitionSpec(n_clients=4, l_ctx=16, l_hor=4, stride=4, site_sizes=sizes)
        clients = build_s2(synthetic_sites(sizes, spec, 1, n_samples=200), spec)
        assert len({c.steps_per_round for c in clients}) == 1

    def test_below_minimum(self):
        sizes = (5, 20)
        spec = PartitionSpec(n_clients=2, l_ctx=16, l_hor=4, stride=4, site_sizes=sizes)
        with pytest.raises(PartitionError):
            build_s2(synthetic_sites(sizes, spec, 0, n_samples=200), spec)

    def test_site_without_windows(self):
        spec = PartitionSpec(n_clients=2, l_ctx=16, l_hor=4, stride=4, min_site_size=1)
        with pytest.raises(PartitionError):
            build_s2([pool(1), pool(1, n_samples=10)], spec)
        with pytest.raises(PartitionError):
            build_s2([pool(1), []], spec)

    def test_site_count_mismatch(self):
        with pytest.raises(PartitionError):
            build_s2([pool(1)], PartitionSpec(n_clients=2))


def test_manifest_table():
    text = manifest_table(build_s3(pool(2), pool(1, Modality.ICG),
                                   PartitionSpec(n_clients=3, l_ctx=16, l_hor=4, stride=4)))
    lines = text.splitlines()
    assert lines[0].split() == ["id", "modality", "n_train", "n_test", "steps_per_round"]
    assert len(lines) == 4 and lines[-1].split()[1] == "ICG"
