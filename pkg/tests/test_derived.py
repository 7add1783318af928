"""The frozen worked examples must match a fresh run of the independent derivation script."""
import importlib.util
import json
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def load_script():
    spec = importlib.util.spec_from_file_location("derive_examples", ROOT / "tools" / "derive_examples.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def test_frozen_file_is_current():
    fresh = json.loads(json.dumps(load_script().derive()))
    frozen = json.loads((ROOT / "tests" / "data" / "derived_examples.json").read_text())
    assert fresh == frozen


def test_script_does_not_import_the_package():
    lines = (ROOT / "tools" / "derive_examples.py").read_text().splitlines()
    imports = [ln for ln in lines if ln.startswith(("import ", "from "))]
    assert imports and not any("duedl" in ln for ln in imports)


def test_exact_values():
    d = load_script().derive()
    assert (d["partial_mse_one_pixel"]["loss"]["num"], d["partial_mse_one_pixel"]["loss"]["den"]) == (1, 3)
    fusion = d["dempster_two_class"]
    assert [b["float"] for b in fusion["b"]] == [0.375, 0.375] and fusion["u"]["float"] == 0.25
    assert fusion["u_roundtrip"]["float"] == 0.25
    assert abs(d["partial_kl_two_class"]["kl"]["float"] - 0.4319) < 1e-4
