import json

import pytest

from mgmkit.config import DEFAULTS, apply_overrides, load_config, require_valid, validate_config
from mgmkit.heartofitall.errors import ArgumentError, ConfigError
from mgmkit.heartofitall.tokens import DecodeConfig
from mgmkit.main import main, run
from mgmkit.training.checkpoint import assemble, checkpoint_save
from mgmkit.utilities.data_loader import save_world
from mgmkit.utilities.task_runner import TaskRunner, normalize_task_name


def _errors(document, command=None):
    cfg, errors = validate_config(document, command)
    assert cfg is None
    return errors


# configuration

def test_empty_document_gives_the_defaults():
    cfg, errors = validate_config({})
    assert errors == []
    assert cfg.to_dict() == DEFAULTS
    assert DEFAULTS["decode"]["cfg_weight"] == 2.0
    assert [t["task"] for t in DEFAULTS["tasks"]] == ["tts", "vc", "tse", "se"]
    assert sum(t["weight"] for t in DEFAULTS["tasks"]) == pytest.approx(1.0)


def test_task_proportions_must_sum_to_one():
    errors = _errors({"tasks": [{"task": "tts", "weight": 0.5}, {"task": "se", "weight": 0.4}]})
    assert any("sum to 0.9" in e for e in errors)


def test_finetune_needs_tasks():
    assert "tasks: no tasks" in _errors({"seed": 0, "tasks": []}, "finetune")


def test_condition_dim_must_match_the_world():
    errors = _errors({"tasks": [{"task": "vc", "weight": 1.0, "condition_dim": 5}]})
    assert any("condition_dim" in e and "world.d_feat" in e for e in errors)


def test_unknown_keys_are_reported():
    assert "net.width: unknown key" in _errors({"net": {"width": 3}})
    assert "colour: unknown key" in _errors({"colour": "red"})


def test_seed_is_required_for_running_commands():
    assert "seed: required for pretrain" in _errors({}, "pretrain")
    cfg, errors = validate_config({}, "inspect-ckpt")
    assert errors == []


def test_every_violation_is_reported_at_once():
    errors = _errors({"net": {"width": 3}, "world": {"alphabet": "many"}, "decode": {"steps": 1.5}})
    assert len(errors) == 3


def test_cross_section_checks():
    errors = _errors({"net": {"d_model": 30, "n_heads": 4}, "world": {"held_out": 5000}})
    assert any("divisible" in e for e in errors)
    assert any("held_out" in e for e in errors)


def test_cross_checks_run_alongside_unknown_keys_and_type_errors():
    errors = _errors({"bogus": 1, "net": {"d_model": 30, "n_heads": 4}, "decode": {"steps": "many"}})
    assert "bogus: unknown key" in errors
    assert any("decode.steps: expected int" in e for e in errors)
    assert any("divisible" in e for e in errors)
    # a mistyped field falls back to its default instead of tripping the range checks
    assert not any(e.startswith("decode.steps: must be") for e in errors)


def test_require_valid_raises_with_the_list():
    with pytest.raises(ConfigError) as info:
        require_valid({"net": {"width": 3}})
    assert info.value.errors == ["net.width: unknown key"]


def test_overrides_are_applied_in_order():
    doc = apply_overrides({"tasks": [{"task": "tts", "weight": 1.0}]},
                          ["net.d_model=64", "decode.prompt_source=prefix", "tasks.0.weight=0.7", "net.d_model=32"])
    assert doc["net"]["d_model"] == 32
    assert doc["decode"]["prompt_source"] == "prefix"
    assert doc["tasks"][0]["weight"] == 0.7
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no-equals-sign"])
    with pytest.raises(ConfigError):
        apply_overrides({"tasks": []}, ["tasks.3.weight=1"])


def test_load_config(tmp_path):
    assert load_config(None) == {}
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 4}))
    assert load_config(path) == {"seed": 4}
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(path)


# command line

def test_missing_config_file_exits_3(tmp_path, capsys):
    missing = tmp_path / "absent.json"
    assert main(["make-world", "--config", str(missing), "--set", "seed=0"]) == 3
    assert str(missing) in capsys.readouterr().err


def test_invalid_config_exits_3(capsys):
    assert main(["make-world", "--set", "seed=0", "--set", "net.width=3"]) == 3
    assert "net.width: unknown key" in capsys.readouterr().err


def test_usage_errors_exit_2():
    assert main(["fly"]) == 2
    assert main(["eval", "--samples", "many"]) == 2
    assert run("fly") == 2
    assert run("inspect-ckpt") == 2


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "inspect-ckpt" in capsys.readouterr().out


def test_inspect_checkpoint(tiny_params, tiny_codec, tmp_path, capsys):
    path = tmp_path / "model.mgmk"
    checkpoint_save(path, assemble(tiny_params, {"ssl": tiny_codec}, step=5))
    assert main(["inspect-ckpt", str(path)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["magic"] == "MGMK"
    assert report["version"] == 1
    assert report["step"] == 5
    assert report["codecs"] == ["ssl"]
    assert ["params/head", [12, 16]] in report["arrays"]


def test_corrupted_checkpoint_exits_4(tiny_params, tmp_path, capsys):
    path = tmp_path / "model.mgmk"
    checkpoint_save(path, assemble(tiny_params))
    blob = bytearray(path.read_bytes())
    blob[40] ^= 0x01
    path.write_bytes(bytes(blob))
    assert main(["inspect-ckpt", str(path)]) == 4
    assert capsys.readouterr().out == ""
    assert main(["inspect-ckpt", str(tmp_path / "nothing.mgmk")]) == 4


def test_oracle_eval_prints_zero_error(clean_world, clean_codec, tmp_path, capsys):
    world_path, codebooks = tmp_path / "world.json", tmp_path / "codebooks.mgmk"
    save_world(world_path, clean_world)
    checkpoint_save(codebooks, assemble(codecs={"ssl": clean_codec}))
    code = main(["eval", "--oracle", "--tasks", "tts", "--samples", "3", "--quiet",
                 "--set", "seed=0", "--set", f"paths.world={world_path}", "--set", f"paths.codebooks={codebooks}"])
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    assert result["task"] == "tts"
    assert result["symbol_error_rate"] == 0.0
    assert result["n_samples"] == 3


def test_eval_without_a_finetuned_checkpoint_exits_4(clean_world, tmp_path):
    world_path = tmp_path / "world.json"
    save_world(world_path, clean_world)
    code = main(["eval", "--quiet", "--set", "seed=0", "--set", f"paths.world={world_path}",
                 "--set", f"paths.finetuned={tmp_path / 'absent.mgmk'}"])
    assert code == 4


# task runner

@pytest.mark.parametrize("name, key", [("TTS", "tts"), ("text-to-speech", "tts"), ("voice conversion", "vc"),
                                       ("text-guided TSE", "tse_text"), ("tse_text", "tse_text")])
def test_normalize_task_name(name, key):
    assert normalize_task_name(name) == key


def test_unknown_task_name():
    with pytest.raises(ArgumentError, match="unknown task"):
        normalize_task_name("karaoke")


def test_oracle_decoding_reads_back_perfectly(clean_world, clean_codec):
    runner = TaskRunner(clean_world, clean_codec, decode=DecodeConfig(steps=4), seed=3, n_samples=3, oracle=True)
    comparison = runner.run_comparison(["tts", "vc", "se", "tse", "tse_text"])
    assert [r.task for r in comparison.results] == ["tts", "vc", "se", "tse", "tse_text"]
    for r in comparison.results:
        assert r.symbol_error_rate == 0.0
        assert len(r.per_sample) == 3
    # prompt-bearing tasks are compared with a prompt of the same speaker
    tts = comparison.results[0]
    assert tts.speaker_similarity == pytest.approx(1.0, abs=1e-4)


def test_parallel_matches_serial(clean_world, clean_codec):
    runner = TaskRunner(clean_world, clean_codec, decode=DecodeConfig(steps=3), seed=8, n_samples=2, oracle=True,
                        prompt_source="prefix")
    serial = runner.run_comparison(["se", "tts", "vc"]).to_json()
    parallel = runner.run_comparison(["se", "tts", "vc"], parallel=True).to_json()
    assert parallel == serial


def test_runner_needs_a_model_per_task(clean_world, clean_codec):
    runner = TaskRunner(clean_world, clean_codec, n_samples=1)
    with pytest.raises(ArgumentError, match="no trained model"):
        runner.run_single_task("tts")
    with pytest.raises(ArgumentError, match="no tasks"):
        runner.run_comparison([])
