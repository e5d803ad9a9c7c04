import pytest

from fourier_rl.config import ConfigError, defaults, load_config, parse_config

GOOD = """
[run]
seeds = 0, 1, 2
total_steps = 5000

[env]
name = pendulum
noise.low = 0.01
noise.medium = 0.1
noise.high = 1.0

[fourier]
variant = clff
betas = 0.003 0.03 0.3
"""


def test_parses_typed_values():
    cfg = parse_config(GOOD)
    assert cfg.get("run.seeds") == (0, 1, 2)
    assert cfg.get("run.total_steps") == 5000
    assert cfg["fourier"]["betas"] == (0.003, 0.03, 0.3)
    assert cfg.noise_levels == {"low": 0.01, "medium": 0.1, "high": 1.0}
    assert cfg.get("sac.discount") == 0.99


def test_defaults_are_valid():
    parse_config("")
    assert defaults().get("fourier.width_multiplier") == 40


@pytest.mark.parametrize("text,path", [
    ("[run]\nbogus = 1\n", "run.bogus"),
    ("[nope]\nx = 1\n", "[nope]"),
    ("[sac]\nbatch_size = lots\n", "sac.batch_size"),
    ("[sac]\ndiscount = 1.5\n", "sac.discount"),
    ("[fourier]\nvariant = tanh\n", "fourier.variant"),
    ("[fourier]\nbeta = 0\n", "fourier.beta"),
    ("[env]\nname = cartpole\n", "env.name"),
    ("[env]\nnoise.low = 0.5\nnoise.medium = 0.1\nnoise.high = 1\n", "env.noise"),
    ("[sac]\nbatch_size = 512\nbuffer_capacity = 100\n", "sac.batch_size"),
])
def test_errors_name_the_key(text, path):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert path in str(e.value)


def test_overrides():
    cfg = parse_config(GOOD, ["sac.batch_size=64", "run.seeds=7"])
    assert cfg.get("sac.batch_size") == 64 and cfg.get("run.seeds") == (7,)
    with pytest.raises(ConfigError):
        parse_config(GOOD, ["batch_size=64"])
    with pytest.raises(ConfigError):
        parse_config(GOOD, ["sac.nonsense=1"])


def test_ini_round_trip_and_digest():
    cfg = parse_config(GOOD)
    again = parse_config(cfg.to_ini())
    assert again.values == cfg.values and again.digest() == cfg.digest()
    assert parse_config(GOOD, ["sac.tau=0.01"]).digest() != cfg.digest()


def test_out_dir_not_part_of_identity():
    assert parse_config(GOOD, ["run.out_dir=/elsewhere"]).digest() == parse_config(GOOD).digest()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_malformed_text():
    with pytest.raises(ConfigError):
        parse_config("no section header here\n")
