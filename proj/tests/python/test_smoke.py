import json
import math

import numpy as np
import pytest

import cupid


def videos(rng, count, dim, prefix):
    return [(f"{prefix}{i:03d}", rng.standard_normal((int(rng.integers(1, 5)), dim)).astype(np.float32))
            for i in range(count)]


def test_shard_round_trip():
    rng = np.random.default_rng(0)
    vs = videos(rng, 5, 4, "v")
    data = cupid.write_shard(vs)
    assert data[:4] == b"CPDE"
    entries = cupid.ingest_shard(data, 4, "s.bin")
    assert [e["video_id"] for e in entries] == [v for v, _ in vs]
    assert entries[0]["offset"] == 14
    vid, clips = cupid.decode_video(data, 4, entries[2]["offset"])
    assert vid == vs[2][0]
    np.testing.assert_array_equal(clips, vs[2][1])


def test_bad_shard_raises():
    with pytest.raises(cupid.CupidError):
        cupid.ingest_shard(b"XXXX" + bytes(10), 4)


def test_pair_similarity_fixture():
    target = np.array([[1, 0], [0, 1]], dtype=np.float32)
    source = np.array([[1, 0], [1, 1]], dtype=np.float32)
    assert cupid.pair_similarity(target, source, "mean") == 0.75
    assert cupid.pair_similarity(target, source, "max") == 1.0


def test_column_means_match_dense_kernel():
    rng = np.random.default_rng(1)
    target = cupid.Corpus.from_videos("T", "target", videos(rng, 4, 6, "t"))
    source = cupid.Corpus.from_videos("S", "source", videos(rng, 30, 6, "s"))
    kernel, target_ids, source_ids = cupid.build_similarity_matrix(target, source)
    assert kernel.shape == (4, 30)
    ids, means = cupid.stream_column_means(target, source, tile_cols=7, threads=2)
    assert ids == source_ids
    oracle = [math.fsum(float(x) for x in kernel[:, i]) / 4 for i in range(30)]
    np.testing.assert_allclose(means, oracle, rtol=0, atol=1e-12)

    manifest = cupid.curate_avg_sim(ids, list(means), 10)
    expected = sorted(range(30), key=lambda i: (-means[i], ids[i]))[:10]
    assert manifest.ids() == [ids[i] for i in expected]
    assert [r.rank for r in manifest.entries] == list(range(1, 11))


def test_knn_is_seeded():
    rng = np.random.default_rng(2)
    target = cupid.Corpus.from_videos("T", "target", videos(rng, 3, 5, "t"))
    source = cupid.Corpus.from_videos("S", "source", videos(rng, 40, 5, "s"))
    a = cupid.curate_knn(target, source, 8, 3.0, seed=5)
    b = cupid.curate_knn(target, source, 8, 3.0, seed=5)
    assert a == b
    assert len(a) == 8
    assert a.strategy == "knn"


def test_heuristic_and_exclusion():
    meta = [
        {"video_id": "v1", "category": "Food", "title": "Easy Pasta!", "subtitle_source": "human"},
        {"video_id": "v2", "category": "Food", "title": "pasta", "subtitle_source": "asr"},
        {"video_id": "v3", "category": "Cars", "title": "pasta", "subtitle_source": "human"},
        {"video_id": "v4", "category": "Food", "title": "bread", "subtitle_source": "human"},
        {"video_id": "v5", "category": "Food", "title": "PASTA night", "subtitle_source": "human"},
    ]
    m = cupid.curate_heuristic(meta, {"Food"}, {"pasta"})
    assert m.ids() == ["v1", "v5"]
    assert all(r.score is None for r in m.entries)
    trimmed = cupid.exclude_overlap(m, ["v1"])
    assert trimmed.ids() == ["v5"]
    assert trimmed.excluded_count == 1


def test_tokenizer_and_schedule():
    assert cupid.tokenize_title("Hello, World! it's") == ["hello", "world", "its"]
    assert cupid.split_steps(3, 100000) == [33334, 33333, 33333]


def test_retrieval_fixture():
    result = cupid.summarize([1, 2, 3, 1, 5], [1, 5, 10])
    assert result["recall_at"] == {1: 0.4, 5: 1.0, 10: 1.0}
    assert result["median_rank"] == 2
    eye = np.eye(6, dtype=np.float32)
    assert cupid.rank_queries(eye, eye, list(range(6))) == [1] * 6


def test_nce_closed_form_and_gradient():
    scores = np.eye(3) * 2.0
    assert cupid.nce_loss(scores, "n_squared") == pytest.approx(-math.log(math.e**2 / (math.e**2 + 6)), abs=1e-12)
    assert len(cupid.negative_set(scores, "n_squared", 0)) == 6
    loss, grad = cupid.nce_loss_grad(scores, "standard")
    assert loss == pytest.approx(-math.log(math.e**2 / (math.e**2 + 4)), abs=1e-12)
    assert grad.shape == (3, 3)
    assert abs(grad.sum()) < 1e-12


def test_cli_in_process(tmp_path):
    out = tmp_path / "plan.jsonl"
    assert cupid.cli_main(["schedule", "--sizes", "9,4", "--steps", "7", "--out", str(out)]) == 0
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert [line["steps"] for line in lines] == [4, 3]
    assert cupid.cli_main(["schedule", "--out", str(out)]) == 2
