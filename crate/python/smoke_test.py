"""Smoke test for the wdw extension module.

Run after `maturin develop -m crates/python/Cargo.toml`, or after
`cargo build -p wdw-python --features extension-module`, in which case the
shared library is picked up from target/.
"""

import importlib.machinery
import importlib.util
import json
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "core" / "fixtures"


def load_wdw():
    try:
        import wdw
        return wdw
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libwdw.so", "libwdw.dylib", "wdw.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                loader = importlib.machinery.ExtensionFileLoader("wdw", str(lib))
                spec = importlib.util.spec_from_file_location("wdw", lib, loader=loader)
                module = importlib.util.module_from_spec(spec)
                loader.exec_module(module)
                return module
    sys.exit("wdw extension not found; build it first")


def main():
    wdw = load_wdw()
    schema = (FIXTURES / "annex.wdl").read_text()

    canonical = wdw.parse(schema)
    assert wdw.parse(canonical) == canonical
    assert wdw.validate(schema) == []

    verdicts = {label: (kind, names) for label, kind, names in wdw.analyze(schema)}
    assert verdicts["cout_secu"] == ("missing", ["montant_remb"]), verdicts["cout_secu"]
    assert verdicts["age"] == ("derivable", [])
    assumed = {label: kind for label, kind, _ in wdw.analyze(schema, ["montant_remb"])}
    assert assumed["cout_secu"] == "derivable"

    snapshot = (FIXTURES / "snapshot.json").read_text()
    store = wdw.build(schema, snapshot, "mois:2000-01")
    assert "Praticien" in json.loads(store)["classes"]
    moved = (FIXTURES / "ticks" / "2000-02.json").read_text()
    store, report = wdw.refresh(store, moved, "mois:2000-02")
    assert "Praticien" in report

    listing = wdw.inspect(store, "Praticien", prop="ville")
    assert '"Toulouse"' in listing and '"Albi"' in listing, listing

    try:
        wdw.refresh(store, moved, "mois:2000-01")
    except RuntimeError as e:
        assert "mois" in str(e)
    else:
        raise AssertionError("a tick in the past must fail")
    try:
        wdw.parse("interface P {")
    except ValueError:
        pass
    else:
        raise AssertionError("unterminated interface must fail")

    print("smoke test ok")


if __name__ == "__main__":
    main()
