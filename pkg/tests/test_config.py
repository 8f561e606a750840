import pytest

from mpca_tl.config import ConfigError, load, parse_text
from mpca_tl.pipeline import derive_seed

MINIMAL = "seed = 3\nsource.network = circular\ntarget.network = rectangular\n"


def test_minimal_config_defaults():
    cfg = parse_text(MINIMAL)
    assert cfg.experiment.seed == 3 and cfg.experiment.q_percent == 99.0 and cfg.experiment.copies == 10
    assert cfg.source.network == "circular" and cfg.target.network == "rectangular"
    assert cfg.source.scenario.rng_seed == derive_seed(3, "synth.source")
    assert cfg.target.scenario.rng_seed == derive_seed(3, "synth.target")
    assert cfg.snr_range == (20.0, 40.0) and cfg.out == "runs/out"
    assert cfg.experiment.case_id == "source-circular->target-rectangular"


def test_full_keys():
    text = MINIMAL + """
# comment line
q_percent = 97   # trailing comment
copies = 4
paper_split = yes
target_split = 0.8, 0.1, 0.1
source.group_velocity = 3.5
source.seed = 11
source.bundle = data/a
train.batch_size = 5
train.center_output = true
mpca_train.max_epochs = 7
finetune.lr = 0.0005
damage.D9 = 60, 190
sensor.PZT1 = 100, 231
snr_min_db = 25
out = somewhere
"""
    cfg = parse_text(text)
    e = cfg.experiment
    assert (e.q_percent, e.copies, e.paper_split, e.target_split) == (97.0, 4, True, (0.8, 0.1, 0.1))
    assert cfg.source.scenario.group_velocity == 3.5 and cfg.source.scenario.rng_seed == 11
    assert cfg.source.bundle == "data/a" and cfg.target.bundle is None
    assert e.train.batch_size == 5 and e.train.center_output and e.mpca_train.max_epochs == 7
    assert e.finetune.lr == 0.0005
    assert cfg.source.scenario.damage_sites["D9"] == (60.0, 190.0)
    assert cfg.target.scenario.sensors["PZT1"] == (100.0, 231.0)
    assert cfg.snr_range == (25.0, 40.0) and cfg.out == "somewhere"


@pytest.mark.parametrize("text,needle", [
    (MINIMAL + "colour = red\n", "colour"),
    (MINIMAL + "source.colour = red\n", "source.colour"),
    (MINIMAL + "train.seed = 4\n", "train.seed"),
    (MINIMAL + "seed = 4\n", "duplicate"),
    ("seed = 3\nsource.network = circular\n", "target.network"),
    (MINIMAL.replace("rectangular", "hexagonal"), "target.network"),
    (MINIMAL + "copies = many\n", "copies"),
    (MINIMAL + "copies = 0\n", "copies"),
    (MINIMAL + "q_percent = 120\n", "q_percent"),
    (MINIMAL + "train.lr = -1\n", "train"),
    (MINIMAL + "paper_split = maybe\n", "paper_split"),
    (MINIMAL + "damage.D9 = 1\n", "damage.D9"),
    (MINIMAL + "damage.D9 = 500, 10\n", "outside the plate"),
    (MINIMAL + "snr_min_db = 50\n", "snr"),
    (MINIMAL + "just words\n", "line 4"),
])
def test_rejections(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_text(text)


def test_overrides_re_resolve():
    cfg = parse_text(MINIMAL).with_overrides(seed=9, q=90, copies=2, out="o", paper_split=True)
    assert cfg.experiment.seed == 9 and cfg.experiment.q_percent == 90 and cfg.experiment.copies == 2
    assert cfg.out == "o" and cfg.experiment.paper_split
    assert cfg.source.scenario.rng_seed == derive_seed(9, "synth.source")
    with pytest.raises(ConfigError):
        cfg.domain("other")


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load(tmp_path / "nope.cfg")
    (tmp_path / "a.cfg").write_text(MINIMAL)
    assert load(tmp_path / "a.cfg").experiment.seed == 3


def test_shipped_configs_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    for path in sorted(root.glob("*.cfg")):
        load(path)
