import pytest
from pydantic import ValidationError

from conftest import tiny_run
from src.config import Config, resolve_seed
from src.handlers.recipe_handler import RecipeHandler
from src.schemas.peft_schemas import (
    AdapterConfig,
    CompacterConfig,
    HardPromptConfig,
    LoraConfig,
    NoPeftConfig,
    SoftPromptConfig,
    parse_peft_spec,
)
from src.schemas.run_config_schemas import AlignmentSpec, CorpusSpec, RunConfig, SplitConfig, default_gaps
from src.utils.errors import ConfigurationError, ErrorResponse, KOutOfRangeError


class TestParsePeftSpec:
    @pytest.mark.parametrize(
        "config,expected",
        [
            ({"k": 4}, CompacterConfig),
            ({"targets": ["W_q"]}, LoraConfig),
            ({"n_tokens": 3}, SoftPromptConfig),
            ({"combo": 2}, HardPromptConfig),
            ({"r": 4}, AdapterConfig),
            ({}, NoPeftConfig),
        ],
    )
    def test_type_is_inferred(self, config, expected):
        assert isinstance(parse_peft_spec(config).variant, expected)

    def test_default_unfreeze(self):
        assert parse_peft_spec({"type": "lora"}).unfreeze == {"linear_head", "layer_norm"}
        assert parse_peft_spec({"type": "hard_prompt"}).unfreeze == frozenset()
        assert parse_peft_spec({"type": "adapter", "unfreeze": "all"}).full_fine_tune

    def test_unknown_type(self):
        with pytest.raises(ConfigurationError):
            parse_peft_spec({"type": "prefix"})

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            parse_peft_spec({"type": "lora", "k": 4})

    def test_compacter_k_divides_r(self):
        with pytest.raises(ConfigurationError):
            parse_peft_spec({"type": "compacter", "k": 3, "r": 8})

    def test_soft_prompt_length_matches_template(self):
        with pytest.raises(ConfigurationError):
            parse_peft_spec({"type": "soft_prompt", "n_tokens": 5})
        assert parse_peft_spec({"type": "soft_prompt", "n_tokens": 5, "init": "random"}).prompt_length == 5

    def test_to_dict_round_trips(self):
        spec = parse_peft_spec({"type": "compacter", "k": 2, "r": 4, "shared_A": False})
        assert parse_peft_spec(spec.to_dict()) == spec


class TestRunConfig:
    def test_defaults_are_valid(self):
        run = RunConfig()
        assert run.corpus.latent_dim == run.encoder.d_proj
        assert run.train_languages == ["de", "fr", "ko"]

    def test_unknown_field_is_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"trainer": {}})

    def test_latent_dim_must_match_projection(self):
        with pytest.raises(ValidationError):
            tiny_run(**{"corpus.latent_dim": 16})

    def test_prompt_must_fit_max_len(self):
        with pytest.raises(ValidationError):
            tiny_run(**{"corpus.seq_len": 14, "peft": {"type": "hard_prompt"}})

    def test_unknown_eval_language(self):
        with pytest.raises(ValidationError):
            tiny_run(**{"eval.languages": ["ko"]})

    def test_pivot_required(self):
        with pytest.raises(ValidationError):
            CorpusSpec(languages=["de", "fr"])

    def test_split_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            SplitConfig(train=0.5, dev=0.5, test=0.5)

    def test_alignment_lambda_alias(self):
        run = tiny_run(**{"alignment": {"lambda": 0.3}})
        assert run.alignment.lambda_ == 0.3
        assert run.to_json_dict()["alignment"]["lambda"] == 0.3

    def test_mt_inference_default(self):
        assert tiny_run(**{"alignment": {"routine": 3, "lambda": 0.1}}).mt_inference
        assert not tiny_run(**{"alignment": {"routine": 3, "lambda": 0.0}}).mt_inference
        assert not tiny_run(**{"alignment": {"routine": 1, "lambda": 0.1}}).mt_inference
        assert not tiny_run(**{"alignment": {"lambda": 0.1}, "train.mt_inference": False}).mt_inference

    def test_baseline_alignment_has_zero_lambda(self):
        assert tiny_run().effective_alignment == AlignmentSpec(lambda_=0.0)

    def test_with_overrides_leaves_original_untouched(self):
        run = tiny_run()
        changed = run.with_overrides(**{"train.learning_rate": 3e-4})
        assert changed.train.learning_rate == 3e-4
        assert run.train.learning_rate == 1e-4

    def test_config_hash(self):
        assert tiny_run().config_hash() == tiny_run().config_hash()
        assert tiny_run().config_hash() != tiny_run(seed=1).config_hash()

    def test_corpus_seed(self):
        assert tiny_run(seed=4).corpus_seed == 4
        assert tiny_run(**{"seed": 4, "corpus.seed": 9}).corpus_seed == 9

    def test_default_gaps(self):
        assert default_gaps(["en", "de", "fr"]) == {"en": 0.0, "de": 0.08, "fr": 0.16}


class TestRecipes:
    @pytest.mark.parametrize("name", RecipeHandler.list_recipes())
    def test_every_recipe_validates(self, name):
        RunConfig.model_validate(RecipeHandler.resolve(name))

    def test_resolve_accepts_json_suffix(self):
        assert RecipeHandler.resolve("few_shot.json") == RecipeHandler.resolve("few_shot")

    def test_resolve_reads_files(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text('{"name": "mine"}', encoding="utf-8")
        assert RecipeHandler.resolve(str(path)) == {"name": "mine"}

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            RecipeHandler.resolve(str(path))

    def test_non_object(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            RecipeHandler.resolve(str(path))

    def test_unknown_reference(self):
        with pytest.raises(ConfigurationError):
            RecipeHandler.resolve("no_such_recipe")


class TestSeedResolution:
    def test_flag_beats_env_beats_file(self, monkeypatch):
        monkeypatch.setenv(Config.SEED_ENV, "7")
        assert resolve_seed(1, 3) == 3
        assert resolve_seed(1) == 7
        monkeypatch.delenv(Config.SEED_ENV)
        assert resolve_seed(1) == 1

    def test_bad_env_seed(self, monkeypatch):
        monkeypatch.setenv(Config.SEED_ENV, "-2")
        with pytest.raises(ConfigurationError):
            resolve_seed(1)


class TestJobsResolution:
    def test_defaults_to_one(self, monkeypatch):
        monkeypatch.delenv(Config.JOBS_ENV, raising=False)
        assert Config.jobs() == 1
        monkeypatch.setenv(Config.JOBS_ENV, " ")
        assert Config.jobs() == 1

    def test_reads_env(self, monkeypatch):
        monkeypatch.setenv(Config.JOBS_ENV, "4")
        assert Config.jobs() == 4

    @pytest.mark.parametrize("raw", ["four", "0", "-1", "1.5"])
    def test_bad_env_jobs(self, monkeypatch, raw):
        monkeypatch.setenv(Config.JOBS_ENV, raw)
        with pytest.raises(ConfigurationError, match=Config.JOBS_ENV):
            Config.jobs()


class TestErrorResponse:
    def test_domain_error(self):
        response = ErrorResponse.from_exception(KOutOfRangeError("K must lie in [1, 5], got 9"))
        assert response.to_dict() == {
            "status": False,
            "message": "K must lie in [1, 5], got 9",
            "code": 1,
            "kind": "KOutOfRangeError",
        }

    def test_configuration_error_exits_two(self):
        assert ErrorResponse.from_exception(ConfigurationError("bad")).code == 2

    def test_validation_error_names_field(self):
        with pytest.raises(ValidationError) as err:
            RunConfig.model_validate({"train": {"epochs": 0}})
        response = ErrorResponse.from_exception(err.value)
        assert response.code == 2
        assert "train.epochs" in response.message

    def test_unexpected_error(self):
        response = ErrorResponse.from_exception(RuntimeError("boom"))
        assert (response.code, response.kind, response.message) == (1, "RuntimeError", "boom")
