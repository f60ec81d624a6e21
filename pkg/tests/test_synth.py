import numpy as np
import pytest
from scipy.stats import hypergeom

from casa.style import StyleEmbedder, StyleExtractor
from casa.synth import (
    Dataset,
    StreamSchedule,
    Style,
    SynthConfig,
    _PayloadSource,
    class_prototypes,
    generate,
    read_ndjson,
    render_patch,
    schedule_domains,
    separability,
    write_ndjson,
)


def test_ordered_first_segment():
    seq = schedule_domains([100, 100], StreamSchedule("ordered"), np.random.default_rng(0))
    assert np.all(seq[:100] == 0) and np.all(seq[100:] == 1)


def test_gradual_mixes_only_inside_overlap():
    rng = np.random.default_rng(0)
    seq = schedule_domains([200, 200, 200], StreamSchedule("gradual", 60), rng)
    assert np.all(seq[:170] == 0) and np.all(seq[230:370] == 1) and np.all(seq[430:] == 2)
    assert np.bincount(seq).tolist() == [200, 200, 200]
    window = seq[170:230]
    assert (window[:30] == 1).sum() < (window[30:] == 1).sum()


def test_gradual_overlap_too_wide():
    with pytest.raises(ValueError):
        schedule_domains([50, 200], StreamSchedule("gradual", 80), np.random.default_rng(0))


def test_random_halves_hypergeometric():
    lengths = [100, 100, 100, 100]
    N, half = 400, 200
    for seed in range(20):
        seq = schedule_domains(lengths, StreamSchedule("random"), np.random.default_rng(seed))
        for part in (seq[:half], seq[half:]):
            for d in range(4):
                dist = hypergeom(N, 100, half)
                assert abs((part == d).sum() - dist.mean()) <= 3 * dist.std()


def test_same_seed_same_stream():
    a, b = generate(seed=5), generate(seed=5)
    assert [s.id for s in a.stream] == [s.id for s in b.stream]
    assert all(np.array_equal(x.patch, y.patch) for x, y in zip(a.stream, b.stream))


def test_generate_structure():
    ds = generate(seed=0)
    assert len(ds.base) == 500 and all(s.domain == 1 for s in ds.base)
    assert len(ds.stream) == 2000 and ds.boundaries == [500, 1000, 1500, 2000]
    assert ds.domains == [1, 2, 3, 4] and all(len(ds.test[d]) == 200 for d in ds.domains)
    ids = [s.id for _, s in ds.all_samples()]
    assert len(ids) == len(set(ids))
    assert all(0 <= s.patch.min() and s.patch.max() <= 1 for _, s in ds.all_samples())
    assert not hasattr(ds.stream[0].item(), "label")
    assert not hasattr(ds.stream[0].item(), "domain")


def test_render_identity_and_clamp():
    payload = np.random.default_rng(0).random((16, 16))
    assert np.array_equal(render_patch(payload, Style()), payload)
    assert np.all(render_patch(payload, Style(offset=10)) == 1.0)


def test_render_order_blur_gain_offset():
    payload = np.zeros((5, 5))
    payload[2, 2] = 1.0
    out = render_patch(payload, Style(blur=0.0, gain=2.0, offset=0.1))
    # gain acts around 0.5 before the offset: 0 -> -0.5 + 0.1 -> clamped
    assert out[0, 0] == 0.0 and out[2, 2] == 1.0


def test_blur_only_domains_separate():
    cfg = SynthConfig()
    rng = np.random.default_rng(0)
    src = _PayloadSource(cfg, rng)
    pa = np.stack([render_patch(src.draw()[0], Style(blur=0.0), rng) for _ in range(200)])
    pb = np.stack([render_patch(src.draw()[0], Style(blur=2.0), rng) for _ in range(200)])
    emb = StyleEmbedder.fit(StyleExtractor(0), pa, 30)
    e = emb.embed_many(np.concatenate([pa, pb]))
    assert separability(e, np.repeat([0, 1], 200)) >= 2.0


def test_default_benchmark_certificate():
    ds = generate(seed=0)
    base = np.stack([s.patch for s in ds.base])
    emb = StyleEmbedder.fit(StyleExtractor(0), base, 30)
    patches = np.concatenate([np.stack([s.patch for s in ds.test[d]]) for d in ds.domains])
    assert separability(emb.embed_many(patches), np.repeat(ds.domains, 200)) >= 2.0


def test_styles_need_separation():
    with pytest.raises(ValueError):
        generate(SynthConfig(styles=(Style(), Style(noise=0.01)), segment_lengths=(50, 50)))


def test_class_prototypes_distinct():
    p = class_prototypes(3, 16)
    assert p.shape == (3, 16, 16)
    assert len({p[k].sum() for k in range(3)}) == 3


def test_regression_stream():
    ds = generate(SynthConfig(task="regression"), seed=1)
    assert ds.n_classes == 0 and isinstance(ds.stream[0].label, float)


def test_ndjson_roundtrip(tmp_path):
    cfg = SynthConfig(segment_lengths=(30, 30), styles=SynthConfig().styles[:2], base_size=20, test_size=5,
                      validation_size=5, schedule=StreamSchedule("ordered"))
    ds = generate(cfg, seed=2)
    path = tmp_path / "ds.ndjson"
    write_ndjson(ds, path)
    back = read_ndjson(path)
    assert isinstance(back, Dataset)
    assert back.boundaries == ds.boundaries and back.task == ds.task
    for (sa, a), (sb, b) in zip(ds.all_samples(), back.all_samples()):
        assert sa == sb and a.id == b.id and a.label == b.label and a.domain == b.domain
        assert np.array_equal(a.patch, b.patch)
