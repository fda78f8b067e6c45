import numpy as np
import pytest

from scabench.errors import DataFormatError
from scabench.victims import (EOS_ID, FIRST_WORD_ID, SOS_ID, DatasetManifest,
                              HashCheckVictim, LookupVictim, MediaSample,
                              TransformVictim, factor_basis, format_media,
                              gen_dataset, lookup_symbol, parse_media,
                              quantize, sample_continuous, sample_sentence,
                              victim_from_manifest)


def flat_image(value, h=16, w=16):
    return MediaSample.continuous(np.full((h, w), value))


class TestQuantize:
    def test_bucket_edges(self):
        assert quantize(0.0, 8) == 0
        assert quantize(5 / 8, 8) == 5
        assert quantize(0.999, 8) == 7

    def test_saturates_at_one(self):
        assert quantize(1.0, 8) == 7
        assert quantize(2.5, 8) == 7


class TestLookupVictim:
    def test_table_address_worked_example(self):
        v = LookupVictim(table_base=0x10000, stride=64)
        # element value 0.7 falls in bucket 5 of 8
        assert quantize(0.7, 8) == 5
        assert v.table_address(5) == 0x10140
        assert v.table_address(5) >> 6 == 0x405

    def test_trace_shape(self):
        v = LookupVictim()
        trace, _ = v.run(flat_image(0.3))
        # 8 header + 256 elements * (7 scaffold + 1 lookup) + 4 epilogue
        assert len(trace) == 2060

    def test_lookup_uses_declared_table(self):
        v = LookupVictim(table_base=0x10000, stride=64)
        img = np.zeros((16, 16))
        img[0, 0] = 0.7
        trace, _ = v.run(MediaSample.continuous(img))
        leaky = trace.data_addresses[trace.instruction_addresses == 0x401110]
        assert leaky[0] == 0x10140
        assert set(leaky[1:]) == {0x10000}

    def test_difference_confined_to_leaky_function(self):
        v = LookupVictim()
        a = np.full((16, 16), 0.2)
        b = a.copy()
        b[3, 5] = 0.9
        ta, _ = v.run(MediaSample.continuous(a))
        tb, _ = v.run(MediaSample.continuous(b))
        assert len(ta) == len(tb)
        assert np.array_equal(ta.instruction_addresses, tb.instruction_addresses)
        differs = ta.data_addresses != tb.data_addresses
        assert differs.any()
        assert not (differs & ~v.leaky_record_mask(ta)).any()

    def test_leaky_mask_counts_one_access_per_element(self):
        v = LookupVictim()
        trace, _ = v.run(flat_image(0.5))
        assert v.leaky_record_mask(trace).sum() == 256

    def test_output_is_linear(self):
        v = LookupVictim()
        rng = np.random.default_rng(0)
        x = rng.random((16, 16))
        y = rng.random((16, 16))
        fx = v.public_output(MediaSample.continuous(x)).image
        fy = v.public_output(MediaSample.continuous(y)).image
        fxy = v.public_output(MediaSample.continuous(0.3 * x + 0.7 * y)).image
        assert np.max(np.abs(fxy - (0.3 * fx + 0.7 * fy))) <= 1e-12

    def test_rejects_wrong_shape(self):
        with pytest.raises(DataFormatError):
            LookupVictim().run(flat_image(0.5, h=8, w=8))


class TestTransformVictim:
    def test_trip_count_depends_on_value(self):
        v = TransformVictim()
        t_low, _ = v.run(flat_image(0.0))
        t_high, _ = v.run(flat_image(0.99))
        assert len(t_high) > len(t_low)

    def test_difference_confined_to_leaky_function(self):
        v = TransformVictim()
        a = np.full((16, 16), 0.2)
        b = a.copy()
        b[0, 0] = 0.21  # same quantization bucket: traces must be identical
        ta, _ = v.run(MediaSample.continuous(a))
        tb, _ = v.run(MediaSample.continuous(b))
        assert np.array_equal(ta.data_addresses, tb.data_addresses)
        leaky = v.leaky_record_mask(ta)
        assert leaky.any() and not leaky.all()


class TestHashCheckVictim:
    def test_hash_worked_example(self):
        v = HashCheckVictim()
        assert v.bucket_of(0) == 11
        assert v.bucket_of(1) == 48
        assert v.bucket_of(2) == (2 * 37 + 11) % 64

    def test_hash_collision_free_for_default_vocab(self):
        v = HashCheckVictim()
        buckets = {v.bucket_of(w) for w in range(v.vocab_size)}
        assert len(buckets) == v.vocab_size

    def test_trace_length_tracks_word_count(self):
        v = HashCheckVictim()
        words = [FIRST_WORD_ID + w for w in (0, 5, 9, 17, 25)]
        trace, _ = v.run(MediaSample.token_seq([SOS_ID] + words + [EOS_ID]))
        # 6 header + 5 per word + 2 epilogue
        assert len(trace) == 6 + 5 * 5 + 2

    def test_repeated_word_repeats_bucket_accesses(self):
        v = HashCheckVictim()
        w = FIRST_WORD_ID + 13
        trace, _ = v.run(MediaSample.token_seq([SOS_ID, w, w, EOS_ID]))
        mask = v.leaky_record_mask(trace)
        probes = trace.data_addresses[mask]
        assert len(probes) == 4
        assert np.array_equal(probes[:2], probes[2:])

    def test_echoes_input(self):
        v = HashCheckVictim()
        toks = [SOS_ID, FIRST_WORD_ID + 3, EOS_ID]
        out = v.public_output(MediaSample.token_seq(toks))
        assert out.tokens.tolist() == toks

    def test_rejects_foreign_tokens(self):
        v = HashCheckVictim(vocab_size=8)
        with pytest.raises(DataFormatError):
            v.run(MediaSample.token_seq([SOS_ID, FIRST_WORD_ID + 20, EOS_ID]))


class TestSymbols:
    @pytest.mark.parametrize("victim", [LookupVictim(), TransformVictim(), HashCheckVictim()])
    def test_ranges_disjoint(self, victim):
        spans = sorted((s.start, s.end) for s in victim.symbols)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            assert a1 <= b0

    def test_lookup_symbol(self):
        v = LookupVictim()
        assert lookup_symbol(v.symbols, 0x401110) == "extend_lookup"
        assert lookup_symbol(v.symbols, 0x401000) == "read_frame"
        assert lookup_symbol(v.symbols, 0x401140) is None  # end is exclusive
        assert lookup_symbol(v.symbols, 0x999999) is None


class TestGenerativeFamilies:
    def test_factor_images_stay_in_range(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            sample, z, label = sample_continuous(rng)
            assert sample.image.shape == (16, 16)
            assert 0.0 <= sample.image.min() and sample.image.max() <= 1.0
            assert label == (2 if z[0] > 0 else 0) + (1 if z[1] > 0 else 0)

    def test_factor_family_concentrates_distances(self):
        rng = np.random.default_rng(2)
        fam = np.stack([sample_continuous(rng)[0].image.ravel() for _ in range(32)])
        uni = rng.random((32, 256))

        def mean_pair_dist(x):
            d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
            return d[np.triu_indices(len(x), k=1)].mean()

        assert mean_pair_dist(fam) < 0.5 * mean_pair_dist(uni)

    def test_factor_basis_limit(self):
        assert factor_basis(8, 8, 8).shape == (8, 8, 8)
        with pytest.raises(DataFormatError):
            factor_basis(8, 8, 9)

    def test_sentences_are_framed_and_grouped(self):
        rng = np.random.default_rng(3)
        group = 32 // 4
        lengths = set()
        for _ in range(50):
            sample, template_id = sample_sentence(rng)
            toks = sample.tokens.tolist()
            assert toks[0] == SOS_ID and toks[-1] == EOS_ID
            content = toks[1:-1]
            lengths.add(len(content))
            assert 0 <= template_id < 4
            for t in content:
                assert FIRST_WORD_ID <= t < FIRST_WORD_ID + 32
        assert lengths <= {2, 3, 5}

    def test_content_tokens_strips_frame(self):
        s = MediaSample.token_seq([SOS_ID, 5, 9, EOS_ID])
        assert s.content_tokens().tolist() == [5, 9]


class TestDataset:
    def tiny_manifest(self, victim="lookup"):
        return DatasetManifest(victim=victim, n_train=6, n_test=2, seed=4,
                               height=8, width=8)

    def test_same_manifest_same_bits(self):
        m = self.tiny_manifest()
        a = gen_dataset(m)
        b = gen_dataset(m)
        for sa, sb in zip(a.samples, b.samples):
            assert np.array_equal(sa.image, sb.image)
        for ta, tb in zip(a.traces, b.traces):
            assert np.array_equal(ta.data_addresses, tb.data_addresses)
        assert np.array_equal(a.labels, b.labels)

    def test_splits_disjoint_and_sized(self):
        ds = gen_dataset(self.tiny_manifest())
        assert len(ds.train_idx) == 6 and len(ds.test_idx) == 2
        assert not set(ds.train_idx) & set(ds.test_idx)
        assert len(ds.samples) == len(ds.traces) == len(ds.outputs) == 8

    def test_seed_changes_data(self):
        a = gen_dataset(self.tiny_manifest())
        b = gen_dataset(DatasetManifest(victim="lookup", n_train=6, n_test=2,
                                        seed=5, height=8, width=8))
        assert not np.array_equal(a.samples[0].image, b.samples[0].image)

    def test_text_dataset(self):
        ds = gen_dataset(DatasetManifest(victim="hashcheck", n_train=4, n_test=2, seed=1))
        assert all(s.kind == "tokens" for s in ds.samples)
        assert all(o.tokens.tolist() == s.tokens.tolist()
                   for s, o in zip(ds.samples, ds.outputs))

    def test_unknown_victim(self):
        with pytest.raises(DataFormatError):
            victim_from_manifest(DatasetManifest(victim="nope"))


class TestMediaFormat:
    def test_continuous_roundtrip_exact(self):
        rng = np.random.default_rng(9)
        img = rng.random((5, 7))
        again = parse_media(format_media(MediaSample.continuous(img)))
        assert again.kind == "continuous"
        assert np.array_equal(again.image, img)

    def test_tokens_roundtrip(self):
        toks = [SOS_ID, 4, 17, 2, EOS_ID]
        again = parse_media(format_media(MediaSample.token_seq(toks)))
        assert again.kind == "tokens"
        assert again.tokens.tolist() == toks

    def test_empty_token_seq(self):
        again = parse_media(format_media(MediaSample.token_seq([])))
        assert again.tokens.tolist() == []

    @pytest.mark.parametrize("text", [
        "",
        "continuous 2\n",
        "continuous 2 2\n0.0 0.0\n",
        "continuous 1 2\n0.0\n",
        "tokens 3\n1 2\n",
        "matrix 1 1\n0\n",
    ])
    def test_malformed_rejected(self, text):
        with pytest.raises(DataFormatError):
            parse_media(text)


class TestManifestFormat:
    def test_roundtrip(self):
        m = DatasetManifest(victim="transform", n_train=10, n_test=3, seed=42)
        assert DatasetManifest.from_lines(m.to_lines()) == m

    def test_comments_and_blanks_ignored(self):
        text = "# dataset\nvictim=lookup\n\nn_train=4  # small\n"
        m = DatasetManifest.from_lines(text)
        assert m.victim == "lookup" and m.n_train == 4

    def test_unknown_key(self):
        with pytest.raises(DataFormatError):
            DatasetManifest.from_lines("victim=lookup\nflavor=mint\n")

    def test_missing_victim(self):
        with pytest.raises(DataFormatError):
            DatasetManifest.from_lines("n_train=4\n")
