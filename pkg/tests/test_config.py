import pytest

from transfer_nmt.config import REGISTRY, SECTIONS, ConfigError, RunConfig, defaults_table, load_config, parse_text


def test_every_key_has_section_owner_and_doc():
    for name, key in REGISTRY.items():
        assert name.split(".", 1)[0] in SECTIONS
        assert key.owner and key.doc


def test_defaults_listing_covers_every_key():
    lines = defaults_table().splitlines()
    assert lines[0] == "key\tdefault\towner\tdescription"
    assert [line.split("\t")[0] for line in lines[1:]] == list(REGISTRY)


def test_defaults_round_trip_through_text():
    cfg = RunConfig()
    assert RunConfig(parse_text(cfg.to_text())) == cfg


def test_later_files_override_earlier(tmp_path):
    a, b = tmp_path / "a.cfg", tmp_path / "b.cfg"
    a.write_text("model.d_model = 32\ntrain.pde = off\n", encoding="utf-8")
    b.write_text("# comment\nmodel.d_model = 48  # trailing comment\n", encoding="utf-8")
    cfg = load_config([a, b])
    assert cfg["model.d_model"] == 48
    assert cfg["train.pde"] is False


def test_unknown_key_names_the_offender(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("model.d_model = 32\nmodel.colour = red\n", encoding="utf-8")
    with pytest.raises(ConfigError, match=r"bad.cfg:2: unknown config key 'model.colour'"):
        load_config([path])


@pytest.mark.parametrize("text, message", [
    ("model.d_model 32", "expected 'key = value'"),
    ("model.d_model = many", "bad value"),
    ("train.pde = maybe", "bad value"),
])
def test_malformed_lines(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_text(text)


def test_typed_values():
    values = parse_text("experiment.seeds = 3, 4,5\nmodel.pde_layer = auto\ndata.languages = a:0,b:2")
    assert values["experiment.seeds"] == (3, 4, 5)
    assert values["model.pde_layer"] is None
    assert values["data.languages"] == ("a:0", "b:2")


def test_sections():
    section = RunConfig().section("decode")
    assert section == {"beam": 5, "max_length": 40, "length_penalty": 1.0}


def test_unknown_key_in_mapping():
    with pytest.raises(ConfigError):
        RunConfig({"nope": 1})
    with pytest.raises(ConfigError):
        RunConfig()["nope"]
