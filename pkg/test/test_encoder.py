import numpy as np
import pytest

from src.models.encoder import ImageBank, TextEncoder, count_params, encode_image, encode_text
from src.schemas.run_config_schemas import EncoderConfig
from src.utils.errors import CorpusFormatError, DegenerateVectorError, LengthError, MissingImageError, TokenError


class TestCountParams:
    def test_default_config(self):
        assert count_params(EncoderConfig()) == 203680

    def test_matches_instantiated_tensors(self, tiny_encoder_config):
        encoder = TextEncoder.init(tiny_encoder_config)
        assert count_params(encoder) == sum(t.size for t in encoder.params.values())

    def test_zero_layers(self):
        cfg = EncoderConfig(vocab_size=16, d_model=4, n_layers=0, n_heads=1, d_ff=8, max_len=8, d_proj=2)
        assert count_params(cfg) == 16 * 4 + 8 * 4 + 4 * 2 + 2


class TestEncodeText:
    def test_shape_and_determinism(self, tiny_encoder_config, random_tokens):
        encoder = TextEncoder.init(tiny_encoder_config, seed=3)
        tokens = random_tokens(1)[0]
        first = encode_text(encoder, tokens)
        again = encode_text(TextEncoder.init(tiny_encoder_config, seed=3), tokens)
        assert first.shape == (tiny_encoder_config.d_proj,)
        assert np.array_equal(first.data, again.data)

    def test_batch_rows_match_single_encodes(self, tiny_encoder_config, random_tokens):
        encoder = TextEncoder.init(tiny_encoder_config)
        texts = random_tokens(3, length=5)
        batch = encoder.encode_batch(texts).data
        for row, tokens in zip(batch, texts):
            assert np.allclose(row, encoder.encode_text(tokens).data, atol=1e-12)

    def test_padding_does_not_change_embeddings(self, tiny_encoder_config, random_tokens):
        encoder = TextEncoder.init(tiny_encoder_config)
        short, long = random_tokens(1, length=3)[0], random_tokens(1, length=7)[0]
        together = encoder.encode_batch([short, long]).data
        assert np.allclose(together[0], encoder.encode_text(short).data, atol=1e-10)

    def test_mean_pooling(self, random_tokens):
        cfg = EncoderConfig(vocab_size=32, d_model=8, n_layers=1, n_heads=2, d_ff=16, max_len=16, d_proj=8, pooling="mean")
        encoder = TextEncoder.init(cfg)
        short, long = random_tokens(1, length=3)[0], random_tokens(1, length=6)[0]
        together = encoder.encode_batch([short, long]).data
        assert np.allclose(together[0], encoder.encode_text(short).data, atol=1e-10)

    def test_out_of_vocabulary(self, tiny_encoder_config):
        encoder = TextEncoder.init(tiny_encoder_config)
        with pytest.raises(TokenError):
            encoder.encode_text([10, tiny_encoder_config.vocab_size])

    def test_too_long(self, tiny_encoder_config):
        encoder = TextEncoder.init(tiny_encoder_config)
        with pytest.raises(LengthError):
            encoder.encode_text([10] * (tiny_encoder_config.max_len + 1))

    def test_empty(self, tiny_encoder_config):
        with pytest.raises(LengthError):
            TextEncoder.init(tiny_encoder_config).encode_text([])

    def test_embed_matches_encode_batch(self, tiny_encoder_config, random_tokens):
        encoder = TextEncoder.init(tiny_encoder_config)
        texts = random_tokens(5)
        assert np.allclose(encoder.embed(texts, chunk_size=2), encoder.encode_batch(texts).data, atol=1e-12)


class TestImageBank:
    def test_vectors_are_unit_and_read_only(self, rng):
        bank = ImageBank()
        bank.add("a", rng.normal(size=4))
        v = encode_image(bank, "a")
        assert np.linalg.norm(v.data) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            bank.vectors["a"][0] = 5.0

    def test_encode_is_constant(self, rng):
        bank = ImageBank()
        bank.add("a", rng.normal(size=4))
        assert np.array_equal(bank.encode_image("a").data, bank.encode_image("a").data)

    def test_missing_image(self):
        with pytest.raises(MissingImageError):
            ImageBank().encode_image("nope")

    def test_zero_vector(self):
        with pytest.raises(DegenerateVectorError):
            ImageBank().add("a", np.zeros(3))

    def test_tsv_reload_is_exact(self, tmp_path, rng):
        bank = ImageBank()
        for i in range(3):
            bank.add(f"img{i}", rng.normal(size=5))
        bank.save_tsv(tmp_path / "images.tsv")
        loaded = ImageBank.load_tsv(tmp_path / "images.tsv", dim=5)
        for image_id in bank.ids():
            assert np.array_equal(loaded.vectors[image_id], bank.vectors[image_id])

    def test_load_renormalizes_with_warning(self, tmp_path, caplog):
        path = tmp_path / "images.tsv"
        path.write_text("a\t3.0,4.0\n", encoding="utf-8")
        loaded = ImageBank.load_tsv(path)
        assert np.allclose(loaded.vectors["a"], [0.6, 0.8])
        assert any("Re-normalized" in r.message for r in caplog.records)

    def test_load_reports_line(self, tmp_path):
        path = tmp_path / "images.tsv"
        path.write_text("a\t1.0,0.0\nb\tx,y\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError) as err:
            ImageBank.load_tsv(path)
        assert err.value.line == 2
