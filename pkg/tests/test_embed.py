import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exemplarnet import tensor as T
from exemplarnet import tensor_io
from exemplarnet.data import (FIRST_WORD, START, STOP, SyntheticSpec, config_hash, downscale_map,
                              generate_synthetic, load_dataset, pad_tokens, save_dataset)
from exemplarnet.encoders import (InputError, encode_image, encode_sequence, init_image_encoder,
                                  init_text_encoder, lstm_cell)
from exemplarnet.models import ModelConfig, StateError, init_model, joint_embed
from exemplarnet.optim import OptimConfig
from exemplarnet.tensor import Tensor
from exemplarnet.train import train

from conftest import assert_grads

SMALL = dict(regions=16, channels=6, samples_per_cluster=20, num_clusters=3, vocab_size=24)


def text_params(rng, vocab=10, E=5):
    p = {}
    init_text_encoder(p, rng, vocab, E)
    return p


class TestEncodeImage:
    def test_zero_grid_zero_weights(self, rng):
        p = {}
        init_image_encoder(p, rng, 4, 3, 5)
        for t in p.values():
            t.data = np.zeros_like(t.data)
        h, pooled = encode_image(np.zeros((9, 4)), p)
        np.testing.assert_array_equal(pooled.data, np.zeros(5))

    @pytest.mark.parametrize("R,D,Dh,E", [(4, 3, 2, 5), (9, 6, 4, 3)])
    def test_shapes(self, rng, R, D, Dh, E):
        p = {}
        init_image_encoder(p, rng, D, Dh, E)
        h, pooled = encode_image(rng.standard_normal((R, D)), p)
        assert h.shape == (R, Dh) and pooled.shape == (E,)
        h, pooled = encode_image(rng.standard_normal((2, R, D)), p)
        assert h.shape == (2, R, Dh) and pooled.shape == (2, E)

    def test_grid_only_encoder(self, rng):
        p = {}
        init_image_encoder(p, rng, 3, 2, None)
        assert encode_image(rng.standard_normal((4, 3)), p)[1] is None

    def test_gradient(self, rng):
        p = {}
        init_image_encoder(p, rng, 3, 4, 2)
        x = rng.standard_normal((5, 3))
        w = Tensor(rng.standard_normal(2))

        def loss():
            h, pooled = encode_image(x, p)
            return T.add(T.sum(T.mul(pooled, w)), T.sum(T.square(h)))
        assert_grads(loss, p)


class TestEncodeSequence:
    def test_single_token_is_one_cell_step(self, rng):
        p = text_params(rng)
        E = 5
        x = T.embedding(p["txt.emb"], [4])
        h, _ = lstm_cell(x, Tensor(np.zeros((1, E))), Tensor(np.zeros((1, E))), p["txt.lstm.W"], p["txt.lstm.b"])
        np.testing.assert_array_equal(encode_sequence([4], p).data, h.data[0])

    def test_deterministic(self, rng):
        p = text_params(rng)
        a, b = encode_sequence([3, 1, 7], p), encode_sequence([3, 1, 7], p)
        np.testing.assert_array_equal(a.data, b.data)

    def test_empty_rejected(self, rng):
        with pytest.raises(InputError):
            encode_sequence([], text_params(rng))

    def test_gradient_three_tokens(self, rng):
        p = text_params(rng)
        w = Tensor(rng.standard_normal(5))
        assert_grads(lambda: T.sum(T.mul(encode_sequence([2, 5, 9], p), w)), p)

    def test_padded_batch_matches_individual(self, rng):
        p = text_params(rng)
        seqs = [[2, 5, 9], [4], [1, 3]]
        toks, lens = pad_tokens(seqs)
        batch = encode_sequence(toks, p, lens).data
        for row, s in zip(batch, seqs):
            np.testing.assert_allclose(row, encode_sequence(s, p).data, atol=1e-14)

    def test_gate_ranges(self, rng):
        p = text_params(rng)
        x = T.embedding(p["txt.emb"], [1, 2])
        h = Tensor(rng.standard_normal((2, 5)))
        z = T.linear(T.concat([x, h], axis=-1), p["txt.lstm.W"], p["txt.lstm.b"]).data * 10
        gates = 1 / (1 + np.exp(-z[:, :10]))
        assert np.all((gates > 0) & (gates < 1))
        h_new, c_new = lstm_cell(x, h, Tensor(np.zeros((2, 5))), p["txt.lstm.W"], p["txt.lstm.b"])
        assert np.all(np.abs(h_new.data) < 1)


class TestSyntheticData:
    def test_same_seed_identical(self):
        a = generate_synthetic(SyntheticSpec(**SMALL, seed=3))
        b = generate_synthetic(SyntheticSpec(**SMALL, seed=3))
        assert a.grids.tobytes() == b.grids.tobytes()
        assert a.tokens == b.tokens and a.targets == b.targets
        np.testing.assert_array_equal(a.answers, b.answers)
        np.testing.assert_array_equal(a.splits, b.splits)

    def test_different_seed_differs(self):
        a = generate_synthetic(SyntheticSpec(**SMALL, seed=3))
        b = generate_synthetic(SyntheticSpec(**SMALL, seed=4))
        assert a.grids.tobytes() != b.grids.tobytes()

    def test_sigma_zero_cluster_mates_identical(self):
        ds = generate_synthetic(SyntheticSpec(**SMALL, sigma=0.0))
        for c in range(3):
            g = ds.grids[ds.clusters == c]
            assert np.all(g == g[0])

    def test_one_nn_over_true_clusters(self):
        # 1-NN in raw grid space with the true cluster template as the query feature
        ds = generate_synthetic(SyntheticSpec(num_clusters=5, samples_per_cluster=200, regions=49, channels=16))
        tr, te = ds.ids("train"), ds.ids("test")
        X = ds.grids.reshape(len(ds), -1)
        keys = np.stack([ds.clusters, ds.templates], axis=1)
        correct = 0
        for i in te:
            d = np.sum((X[tr] - X[i]) ** 2, axis=1)
            # restrict to the same question template, the other half of the answer key
            d[keys[tr, 1] != keys[i, 1]] = np.inf
            correct += ds.answers[tr[np.argmin(d)]] == ds.answers[i]
        assert correct / len(te) > 0.9

    def test_answers_depend_on_cluster_and_template(self):
        ds = generate_synthetic(SyntheticSpec(**SMALL))
        for c, t, a in zip(ds.clusters, ds.templates, ds.answers):
            assert a == (c * 4 + t) % ds.num_classes

    def test_invariants(self):
        ds = generate_synthetic(SyntheticSpec(**SMALL))
        assert np.all(np.isfinite(ds.grids))
        assert all(0 <= t < ds.vocab_size for s in ds.tokens for t in s)
        assert all(s[0] == START and s[-1] == STOP and all(t >= FIRST_WORD for t in s[1:-1]) for s in ds.targets)
        assert np.all((ds.answers >= 0) & (ds.answers < ds.num_classes))
        np.testing.assert_allclose(ds.attention.sum(axis=1), 1.0)
        np.testing.assert_allclose(ds.human_maps.sum(axis=2), 1.0)

    def test_gt_attention_peaks_at_cluster_region(self):
        ds = generate_synthetic(SyntheticSpec(**SMALL, sigma=0.0))
        for c in range(3):
            i = np.flatnonzero(ds.clusters == c)[0]
            energy = np.linalg.norm(ds.grids[i], axis=1)
            assert np.argmax(energy) == np.argmax(ds.attention[i])

    @pytest.mark.parametrize("bad", [dict(regions=15), dict(sigma=-1.0), dict(num_classes=0),
                                     dict(holdout_fraction=1.0), dict(vocab_size=5)])
    def test_bad_spec(self, bad):
        with pytest.raises(ValueError):
            SyntheticSpec(**{**SMALL, **bad})

    def test_downscale_block_mean(self):
        fine = np.arange(16.0)
        out = downscale_map(fine, 2)
        blocks = np.array([[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]], float).mean(axis=1)
        np.testing.assert_allclose(out, blocks / blocks.sum())

    def test_config_hash_order_free(self):
        assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})


class TestDiskLayout:
    def test_roundtrip(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(**SMALL))
        save_dataset(ds, tmp_path)
        back = load_dataset(tmp_path)
        np.testing.assert_array_equal(back.grids, ds.grids)
        assert back.tokens == ds.tokens and back.targets == ds.targets
        np.testing.assert_array_equal(back.splits, ds.splits)
        np.testing.assert_array_equal(back.human_maps, ds.human_maps)

    def test_records_carry_required_fields(self, tmp_path):
        import json
        save_dataset(generate_synthetic(SyntheticSpec(**SMALL)), tmp_path)
        rec = json.loads((tmp_path / "samples.jsonl").read_text().splitlines()[0])
        assert {"id", "tokens", "answer_class", "target_tokens", "paths"} <= set(rec)

    def test_external_features_without_maps(self, tmp_path):
        import json
        (tmp_path / "t").mkdir()
        tensor_io.save(tmp_path / "t" / "g0.dxt", np.ones((4, 2)))
        tensor_io.save(tmp_path / "t" / "g1.dxt", np.zeros((4, 2)))
        recs = [{"id": i, "tokens": [3, 4], "answer_class": i, "target_tokens": [1, 5, 2],
                 "paths": {"image_grid": f"t/g{i}.dxt"}} for i in (0, 1)]
        (tmp_path / "samples.jsonl").write_text("\n".join(json.dumps(r) for r in recs) + "\n")
        (tmp_path / "dataset.json").write_text(json.dumps({"num_classes": 2, "vocab_size": 8}))
        ds = load_dataset(tmp_path)
        assert ds.grids.shape == (2, 4, 2)
        np.testing.assert_allclose(ds.attention, 0.25)

    def test_rejects_out_of_range_tokens(self, tmp_path):
        import json
        (tmp_path / "t").mkdir()
        tensor_io.save(tmp_path / "t" / "g0.dxt", np.ones((4, 2)))
        rec = {"id": 0, "tokens": [99], "answer_class": 0, "target_tokens": [1, 2],
               "paths": {"image_grid": "t/g0.dxt"}}
        (tmp_path / "samples.jsonl").write_text(json.dumps(rec) + "\n")
        (tmp_path / "dataset.json").write_text(json.dumps({"num_classes": 2, "vocab_size": 8}))
        with pytest.raises(ValueError, match="token"):
            load_dataset(tmp_path)


@pytest.fixture(scope="module")
def trained():
    ds = generate_synthetic(SyntheticSpec(num_clusters=4, samples_per_cluster=40, regions=16, channels=8,
                                          num_classes=8, vocab_size=24, seed=5))
    model = init_model(ModelConfig(arch="lqi", channels=8, vocab_size=24, num_classes=8, grid_dim=8,
                                   embed_dim=12, hidden=12))
    train(model, ds, None, OptimConfig(lr_class=0.003, batch=16), 300)
    return ds, model


class TestJointEmbed:

    def test_untrained_rejected(self):
        ds = generate_synthetic(SyntheticSpec(**SMALL))
        model = init_model(ModelConfig(arch="lqi", channels=6, vocab_size=24, num_classes=32, grid_dim=4,
                                       embed_dim=4, hidden=4))
        with pytest.raises(StateError):
            joint_embed(model, ds, [0])

    def test_wrong_arch_rejected(self):
        ds = generate_synthetic(SyntheticSpec(**SMALL))
        model = init_model(ModelConfig(arch="dan", channels=6, vocab_size=24, grid_dim=4, embed_dim=4, hidden=4))
        model.step = 1
        with pytest.raises(StateError):
            joint_embed(model, ds, [0])

    def test_identical_samples_identical_embeddings(self, trained):
        ds, model = trained
        twin = ds.subset([3, 3])
        e = joint_embed(model, twin, [0, 1])
        assert np.sum((e[0] - e[1]) ** 2) == 0.0
        assert e.shape[1] == 12

    def test_intra_class_closer_than_inter(self, trained):
        ds, model = trained
        e = joint_embed(model, ds, ds.ids())
        d = np.sum((e[:, None] - e[None]) ** 2, axis=-1)
        same = ds.answers[:, None] == ds.answers[None]
        off = ~np.eye(len(ds), dtype=bool)
        assert d[same & off].mean() < d[~same].mean()


@settings(max_examples=20, deadline=None)
@given(st.lists(st.lists(st.integers(3, 9), min_size=1, max_size=6), min_size=1, max_size=5))
def test_pad_tokens_preserves_sequences(seqs):
    toks, lens = pad_tokens(seqs)
    for row, s, n in zip(toks, seqs, lens):
        assert list(row[:n]) == s and np.all(row[n:] == 0)
