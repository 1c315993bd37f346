"""Checkpoint store, container format, and initialization-surgery tests."""

import numpy as np
import pytest

from stagesum import model as M
from stagesum.checkpoint import (ALWAYS_RANDOM, IncompatibilityError, InitScheme,
                                 ParamStore, SurgeryError, apply_partial,
                                 apply_scheme, chain_stage, check_compatible,
                                 format_surgery_report, init_random,
                                 loadable_slots)


def cfg(**kw):
    base = dict(num_layers=2, hidden_size=16, num_heads=2, ffn_size=32,
                vocab_size=24, encoder_positions=12, decoder_positions=8,
                dropout_rate=0.0)
    base.update(kw)
    return M.ModelConfig(**base)


class TestContainer:
    def test_round_trip_bitwise(self, tmp_path):
        store = init_random(cfg(), 3)
        store.provenance = ["stageA"]
        path = tmp_path / "m.ckpt"
        store.save(path)
        loaded = ParamStore.load(path)
        assert loaded.names() == store.names()
        for n in store.names():
            assert np.array_equal(loaded[n].data, store[n].data)
        assert loaded.provenance == ["stageA"]
        assert loaded.fingerprint == store.fingerprint

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\0" * 32)
        with pytest.raises(ValueError):
            ParamStore.load(path)

    def test_dimension_mismatch_reported(self, tmp_path):
        small = init_random(cfg(hidden_size=16), 0)
        with pytest.raises(IncompatibilityError, match="embedding.word"):
            check_compatible(small, cfg(hidden_size=32), "seq2seq")

    def test_check_compatible_passes(self):
        check_compatible(init_random(cfg(), 0), cfg(), "seq2seq")

    def test_extra_parameter_reported(self):
        store = init_random(cfg(), 0)
        store.params["rogue.weight"] = store["gate.weight"]
        with pytest.raises(IncompatibilityError, match="rogue"):
            check_compatible(store, cfg(), "seq2seq")


class TestInitRandom:
    def test_deterministic(self):
        a = init_random(cfg(), 7)
        b = init_random(cfg(), 7)
        for n in a.names():
            assert np.array_equal(a[n].data, b[n].data)

    def test_biases_zero_gains_one(self):
        store = init_random(cfg(), 0)
        assert (store["output.bias"].data == 0).all()
        assert (store["encoder.layer.0.self_attn.q.bias"].data == 0).all()
        assert (store["encoder.layer.0.self_attn_norm.gain"].data == 1).all()

    def test_truncated_normal_stats(self):
        store = init_random(cfg(vocab_size=64, hidden_size=16), 0)
        samples = np.concatenate([store[n].data.ravel() for n in store.names()
                                  if n.endswith("weight")])
        assert samples.size >= 10_000
        assert 0.015 <= samples.std() <= 0.025
        assert np.abs(samples).max() <= 0.04 + 1e-12  # two-sigma truncation


class TestApplyScheme:
    def test_random_random_equals_init_random(self):
        store, report = apply_scheme(InitScheme(), cfg(), 5)
        fresh = init_random(cfg(), 5)
        for n in store.names():
            assert np.array_equal(store[n].data, fresh[n].data)
        assert all(v == "randomized" for v in report.values())

    @pytest.fixture
    def encoder_ckpt(self, tmp_path):
        config = cfg()
        src = init_random(config, 99, arch="mlm_encoder")
        src.provenance = ["denoise-stage"]
        path = tmp_path / "enc.ckpt"
        src.save(path)
        return config, src, str(path)

    def test_bert_random(self, encoder_ckpt):
        config, src, path = encoder_ckpt
        store, report = apply_scheme(InitScheme(encoder=path), config, 5)
        fresh = init_random(config, 5)
        # encoder side bitwise from the source
        assert np.array_equal(store["encoder.layer.1.ffn.in.weight"].data,
                              src["encoder.layer.1.ffn.in.weight"].data)
        assert np.array_equal(store["embedding.word"].data,
                              src["embedding.word"].data)
        # decoder side equals fresh random with the run seed
        assert np.array_equal(store["decoder.layer.0.self_attn.q.weight"].data,
                              fresh["decoder.layer.0.self_attn.q.weight"].data)
        assert report["encoder.layer.0.self_attn.q.weight"].startswith("copied-from")
        assert report["decoder.layer.0.self_attn.q.weight"] == "randomized"
        assert store.provenance == ["denoise-stage"]

    def test_bert_bert_symmetric(self, encoder_ckpt):
        config, src, path = encoder_ckpt
        store, report = apply_scheme(InitScheme(encoder=path, decoder="symmetric"),
                                     config, 5)
        for k in range(config.num_layers):
            for proj in ("q", "k", "v", "o"):
                src_w = src[f"encoder.layer.{k}.self_attn.{proj}.weight"].data
                assert np.array_equal(
                    store[f"decoder.layer.{k}.cross_attn.{proj}.weight"].data, src_w)
                assert np.array_equal(
                    store[f"decoder.layer.{k}.self_attn.{proj}.weight"].data, src_w)
        # decoder positional table copied from the encoder's leading rows
        n = config.decoder_positions
        assert np.array_equal(store["embedding.pos_dec"].data,
                              src["embedding.pos_enc"].data[:n])

    def test_gate_and_output_bias_always_random(self, encoder_ckpt):
        config, _, path = encoder_ckpt
        _, report = apply_scheme(InitScheme(encoder=path, decoder="symmetric"),
                                 config, 5)
        for name in ALWAYS_RANDOM:
            assert report[name] == "randomized"

    def test_symmetric_without_encoder_rejected(self):
        with pytest.raises(SurgeryError):
            apply_scheme(InitScheme(decoder="symmetric"), cfg(), 0)

    def test_missing_source_param_named(self, tmp_path):
        config = cfg()
        src = init_random(config, 0, arch="mlm_encoder")
        del src.params["encoder.layer.1.ffn.out.weight"]
        path = tmp_path / "broken.ckpt"
        src.save(path)
        with pytest.raises(SurgeryError, match="encoder.layer.1.ffn.out.weight"):
            apply_scheme(InitScheme(encoder=str(path)), config, 0)

    def test_report_covers_all_params_disjointly(self, encoder_ckpt):
        config, _, path = encoder_ckpt
        store, report = apply_scheme(InitScheme(encoder=path, decoder="symmetric"),
                                     config, 5)
        assert set(report) == set(store.names())
        for v in report.values():
            assert v == "randomized" or v.startswith("copied-from")

    def test_seq2seq_decoder_source(self, tmp_path):
        config = cfg()
        src = init_random(config, 42)
        src.provenance = ["stageA", "stageB"]
        path = tmp_path / "full.ckpt"
        src.save(path)
        store, report = apply_scheme(
            InitScheme(encoder=str(path), decoder=str(path)), config, 5)
        assert np.array_equal(store["decoder.layer.1.cross_attn.k.weight"].data,
                              src["decoder.layer.1.cross_attn.k.weight"].data)
        assert store.provenance == ["stageA", "stageB"]


class TestApplyPartial:
    @pytest.fixture
    def source(self):
        config = cfg()
        return config, init_random(config, 123)

    def test_k0_all_random(self, source):
        config, src = source
        store, report = apply_partial(src, config, 0, 5)
        fresh = init_random(config, 5)
        for n in store.names():
            assert np.array_equal(store[n].data, fresh[n].data)
        assert all(v == "randomized" for v in report.values())

    def test_k1_embeddings_only(self, source):
        config, src = source
        store, report = apply_partial(src, config, 1, 5)
        assert np.array_equal(store["embedding.word"].data,
                              src["embedding.word"].data)
        copied = [n for n, v in report.items() if v.startswith("copied")]
        assert set(copied) == {"embedding.word", "embedding.pos_enc",
                               "embedding.pos_dec"}

    def test_k3_embeddings_plus_two_encoder_layers(self, source):
        config, src = source
        store, report = apply_partial(src, config, 3, 5)
        assert report["encoder.layer.0.ffn.in.weight"].startswith("copied")
        assert report["encoder.layer.1.ffn.in.weight"].startswith("copied")
        assert report["decoder.layer.0.ffn.in.weight"] == "randomized"

    def test_top_k_loads_everything_except_always_random(self, source):
        config, src = source
        store, report = apply_partial(src, config, 2 * config.num_layers, 5)
        for n, v in report.items():
            if n in ALWAYS_RANDOM:
                assert v == "randomized"
            else:
                assert v.startswith("copied"), n

    def test_monotone_subsets(self, source):
        config, src = source
        prev = set()
        for k in range(2 * config.num_layers + 1):
            _, report = apply_partial(src, config, k, 5)
            copied = {n for n, v in report.items() if v.startswith("copied")}
            assert prev <= copied
            if k > 0:
                assert prev < copied
            prev = copied

    def test_k_out_of_range(self, source):
        config, src = source
        with pytest.raises(ValueError):
            apply_partial(src, config, 2 * config.num_layers + 1, 5)
        with pytest.raises(ValueError):
            apply_partial(src, config, -1, 5)

    def test_slot_order(self):
        slots = loadable_slots(cfg())
        assert "embedding.word" in slots[0]
        assert slots[1][0].startswith("encoder.layer.0")
        assert slots[2][0].startswith("encoder.layer.1")
        assert slots[3][0].startswith("decoder.layer.0")
        assert slots[4][0].startswith("decoder.layer.1")


class TestChainStage:
    def test_provenance_appended(self):
        store = init_random(cfg(), 0)
        store.provenance = ["bert-stage"]
        out = chain_stage(store, "gigaword-stage", lambda s: s.copy())
        assert out.provenance == ["bert-stage", "gigaword-stage"]

    def test_format_surgery_report(self):
        text = format_surgery_report({"b": "randomized", "a": "copied-from a"})
        assert text == "a\tcopied-from a\nb\trandomized\n"
