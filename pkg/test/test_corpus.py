import numpy as np
import pytest

from src.extensions import N_RESERVED
from src.schemas.run_config_schemas import CorpusSpec, SplitConfig
from src.services.corpus.corpus_service import check_views, generate, split_few_shot, split_sizes
from src.services.corpus.translation_service import TranslationModel, translate
from src.services.corpus.tsv_service import load_tsv, save_tsv
from src.utils.errors import (
    BatchConstructionError,
    ConfigurationError,
    CorpusFormatError,
    EmptyDatasetError,
    SizeError,
    TokenError,
)
from src.utils.io_utils import file_checksum


class TestTranslate:
    @pytest.fixture
    def tm(self):
        return TranslationModel(["en", "de", "ko"], vocab_size=64, p_gap={"de": 0.0, "ko": 0.3}, seed=5)

    def test_same_language_is_identity(self, tm):
        assert translate(tm, (10, 20, 30), "de", "de") == (10, 20, 30)

    def test_noise_free_round_trip(self, tm):
        tokens = (10, 20, 30, 40)
        assert translate(tm, translate(tm, tokens, "en", "de"), "de", "en") == tokens

    def test_reserved_ids_are_untouched(self, tm):
        tokens = (0, 1, 5, 8)
        assert translate(tm, tokens, "en", "ko") == tokens

    def test_deterministic(self, tm):
        tokens = tuple(range(N_RESERVED, N_RESERVED + 20))
        assert translate(tm, tokens, "en", "ko") == translate(tm, tokens, "en", "ko")
        same_seed = TranslationModel(["en", "de", "ko"], vocab_size=64, p_gap={"de": 0.0, "ko": 0.3}, seed=5)
        assert translate(same_seed, tokens, "en", "ko") == translate(tm, tokens, "en", "ko")

    def test_noise_rate_tracks_gap(self, tm):
        tokens = tuple(int(t) for t in np.random.default_rng(0).integers(N_RESERVED, 64, size=4000))
        clean = tm.permute(tokens, "ko")
        noisy = translate(tm, tokens, "en", "ko")
        changed = np.mean(np.array(clean) != np.array(noisy))
        assert 0.2 < changed < 0.35

    def test_non_pivot_pair_goes_through_pivot(self, tm):
        tokens = (10, 11, 12)
        assert translate(tm, tokens, "de", "ko") == translate(tm, translate(tm, tokens, "de", "en"), "en", "ko")

    def test_unknown_language(self, tm):
        with pytest.raises(ConfigurationError):
            translate(tm, (10,), "en", "xx")

    def test_token_out_of_range(self, tm):
        with pytest.raises(TokenError):
            translate(tm, (64,), "en", "de")


class TestGenerate:
    def test_counts_and_views(self, tiny_corpus_spec):
        dataset, bank, _ = generate(tiny_corpus_spec, seed=0)
        assert len(dataset) == tiny_corpus_spec.n_items == len(bank)
        sample = dataset.samples[0]
        assert set(sample.texts) == {("en", "natural")} | {
            (lang, view) for lang in ("de", "fr") for view in ("natural", "mt_from_pivot", "mt_to_pivot")
        }
        assert all(len(t) == tiny_corpus_spec.seq_len for t in sample.texts.values())

    def test_same_seed_same_corpus(self, tiny_corpus_spec):
        first, bank_a, _ = generate(tiny_corpus_spec, seed=7)
        second, bank_b, _ = generate(tiny_corpus_spec, seed=7)
        assert first == second
        assert all(np.array_equal(bank_a.vectors[i], bank_b.vectors[i]) for i in bank_a.ids())

    def test_different_seed_differs(self, tiny_corpus_spec):
        assert generate(tiny_corpus_spec, seed=1)[0] != generate(tiny_corpus_spec, seed=2)[0]

    def test_zero_gap_language_is_pure_permutation(self):
        spec = CorpusSpec(languages=["en", "de"], n_items=5, seq_len=6, latent_dim=8, vocab_size=32, p_gap={"de": 0.0})
        dataset, _, tm = generate(spec, seed=0)
        for s in dataset.samples:
            assert s.texts[("de", "natural")] == tm.permute(s.texts[("en", "natural")], "de")

    def test_image_vectors_are_unit(self, tiny_corpus_spec):
        _, bank, _ = generate(tiny_corpus_spec, seed=0)
        assert np.allclose([np.linalg.norm(v) for v in bank.vectors.values()], 1.0)


class TestSplitFewShot:
    def test_default_sizes(self):
        assert split_sizes(1000, SplitConfig()) == (50, 50, 900)

    def test_disjoint_and_shared_across_languages(self, tiny_corpus_spec):
        dataset, _, _ = generate(tiny_corpus_spec, seed=0)
        splits = split_few_shot(dataset, seed=3, split=SplitConfig(train=0.4, dev=0.2, test=0.4))
        train, dev, test = (set(d.image_ids) for d in (splits.train, splits.dev, splits.test))
        assert not (train & dev or train & test or dev & test)
        assert train | dev | test == set(dataset.image_ids)
        assert splits.train.languages == dataset.languages

    def test_deterministic(self, tiny_corpus_spec):
        dataset, _, _ = generate(tiny_corpus_spec, seed=0)
        split = SplitConfig(train=0.4, dev=0.2, test=0.4)
        assert split_few_shot(dataset, 1, split).train.image_ids == split_few_shot(dataset, 1, split).train.image_ids

    def test_too_few_items(self):
        with pytest.raises(SizeError):
            split_sizes(10, SplitConfig())


class TestCheckViews:
    def test_complete_corpus_passes(self, tiny_corpus_spec):
        dataset, _, _ = generate(tiny_corpus_spec, seed=0)
        for view in ("natural", "mt_from_pivot", "mt_to_pivot"):
            check_views(dataset, ["de", "fr"], view)

    def test_missing_view_names_sample_and_language(self, tiny_corpus_spec):
        dataset, _, _ = generate(tiny_corpus_spec, seed=0)
        sample = dataset.samples[3]
        del sample.texts[("fr", "mt_to_pivot")]
        with pytest.raises(BatchConstructionError, match=f"{sample.image_id}.*'fr'"):
            check_views(dataset, ["de", "fr"], "mt_to_pivot")
        check_views(dataset, ["de"], "mt_to_pivot")

    def test_pivot_is_skipped(self, tiny_corpus_spec):
        dataset, _, _ = generate(tiny_corpus_spec, seed=0)
        check_views(dataset, ["en"], "mt_from_pivot")

    def test_unknown_view(self, tiny_corpus_spec):
        dataset, _, _ = generate(tiny_corpus_spec, seed=0)
        with pytest.raises(ConfigurationError):
            check_views(dataset, ["de"], "back_translated")


class TestTsv:
    def test_round_trip(self, tmp_path, tiny_corpus_spec):
        dataset, _, _ = generate(tiny_corpus_spec, seed=0)
        rows = save_tsv(dataset, tmp_path / "corpus.tsv")
        assert rows == dataset.row_count()
        assert load_tsv(tmp_path / "corpus.tsv", languages=tiny_corpus_spec.languages) == dataset

    def test_rewrite_is_byte_identical(self, tmp_path, tiny_corpus_spec):
        dataset, _, _ = generate(tiny_corpus_spec, seed=0)
        save_tsv(dataset, tmp_path / "a.tsv")
        save_tsv(generate(tiny_corpus_spec, seed=0)[0], tmp_path / "b.tsv")
        assert file_checksum(tmp_path / "a.tsv") == file_checksum(tmp_path / "b.tsv")

    def test_bad_line_is_reported(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        path.write_text("img0\ten\tnatural\t10 11\nimg0\tde\tnatural\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError) as err:
            load_tsv(path)
        assert err.value.line == 2

    def test_unknown_language(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        path.write_text("img0\ten\tnatural\t10 11\nimg0\txx\tnatural\t10\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError):
            load_tsv(path, languages=["en", "de"])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(EmptyDatasetError):
            load_tsv(path)

    def test_missing_pivot(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        path.write_text("img0\tde\tnatural\t10 11\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError):
            load_tsv(path)
