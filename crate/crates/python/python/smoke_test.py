"""Smoke test for the `mvskill` extension module.

Uses an installed `mvskill` if importable; otherwise loads the library built by
`cargo build --release -p mvskill-py --features extension-module`.
"""

import importlib.util
import json
import pathlib
import shutil
import sys
import tempfile


def load():
    try:
        import mvskill

        return mvskill
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parents[3]
    for name in ("libmvskill.so", "libmvskill.dylib", "mvskill.dll"):
        built = root / "target" / "release" / name
        if built.exists():
            tmp = pathlib.Path(tempfile.mkdtemp()) / ("mvskill.pyd" if name.endswith(".dll") else "mvskill.so")
            shutil.copy(built, tmp)
            spec = importlib.util.spec_from_file_location("mvskill", tmp)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("mvskill not found: build it with cargo build --release -p mvskill-py --features extension-module")


def main():
    m = load()

    assert m.pats_plan(16, 16, 1, 16) == list(range(16))
    assert m.pats_plan(300, 8, 2, 50) == [0, 16, 33, 49, 250, 266, 283, 299]
    assert len(m.uniform_plan(300, 8)) == 8

    text = m.format_target("Late Expert", "smooth and precise")
    assert text == "Proficiency Level: Late Expert; Proficiency Commentary: smooth and precise"
    assert m.parse_output(text) == ("Late Expert", "smooth and precise")
    assert m.parse_output("I think novice: needs work", lenient=True) == ("Novice", "needs work")
    try:
        m.parse_output("no label here")
        raise AssertionError("strict parse should fail")
    except ValueError:
        pass

    assert abs(m.rouge_l("the cat sat", "the cat is sad") - 4 / 7) < 1e-12
    assert abs(m.meteor_exact("the cat sat", "the cat is sad") - 25 / 52) < 1e-12
    assert abs(m.meteor_exact("a b c d", "a b c d") - (1 - 0.5 / 64)) < 1e-12

    cfg = json.loads(m.default_config())
    assert cfg["data"]["view_count"] == 3

    report = json.loads(m.gradcheck("lm", 0))
    assert report["max_resolved_error"] < 1e-5 and report["instances"] >= 6

    print("mvskill smoke test passed")


if __name__ == "__main__":
    main()
