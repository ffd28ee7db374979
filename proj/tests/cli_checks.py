#!/usr/bin/env python3
"""End-to-end checks of the align-lab executable.

Usage: cli_checks.py <align-lab> <schemas-dir> <case>
"""

import json
import os
import pathlib
import subprocess
import sys
import tempfile
import xml.etree.ElementTree as ET

from jsonschema import Draft202012Validator
from referencing import Registry, Resource

BIN = pathlib.Path(sys.argv[1]).resolve()
SCHEMAS = pathlib.Path(sys.argv[2]).resolve()

SMALL_TOML = """name = "cli-small"
seed = 0
[init]
lambda = 1e-3
m = 60
[train]
lr = 1e-3
max_steps = 60000
record_every = 10
dense_until = 10000
sparse_every = 1000
"""


def registry():
    reg = Registry()
    for p in SCHEMAS.glob("*.schema.json"):
        s = json.loads(p.read_text())
        reg = reg.with_resource(s["$id"], Resource.from_contents(s))
    return reg


def validate(instance, name):
    schema = json.loads((SCHEMAS / f"{name}.schema.json").read_text())
    errors = list(Draft202012Validator(schema, registry=registry()).iter_errors(instance))
    for e in errors[:10]:
        print(f"  {name}: {list(e.absolute_path)}: {e.message[:300]}")
    assert not errors, f"{len(errors)} schema errors against {name}"


def run(*args, env=None, cwd=None, expect=0):
    full_env = dict(os.environ)
    full_env.pop("ALIGN_LAB_OUT", None)
    full_env.update(env or {})
    p = subprocess.run([str(BIN), *args], capture_output=True, text=True, env=full_env, cwd=cwd)
    if p.returncode != expect:
        print(p.stdout[-2000:])
        print(p.stderr[-2000:])
    assert p.returncode == expect, f"{args}: exit {p.returncode}, expected {expect}"
    return p


def run_json(*args, **kw):
    return json.loads(run(*args, "--json", **kw).stdout)


def no_temp_files(root):
    left = [p for p in pathlib.Path(root).rglob("*") if p.name.endswith(".tmp")]
    assert not left, f"leftover temp files: {left}"


def small_config(tmp):
    path = pathlib.Path(tmp) / "small.toml"
    path.write_text(SMALL_TOML)
    return path


def case_exit_codes(tmp):
    run("run", "--config", str(pathlib.Path(tmp) / "missing.toml"), expect=2)
    run("run", "--no-such-flag", expect=2)
    run("run", "--preset", "b1-small", "--config", "x.toml", expect=2)
    run("run", "--preset", "nope", expect=2)
    bad = pathlib.Path(tmp) / "bad.toml"
    bad.write_text("[init]\nm = \"many\"\n")
    p = run("run", "--config", str(bad), expect=2)
    assert "init.m" in p.stderr, p.stderr
    short = pathlib.Path(tmp) / "short.toml"
    short.write_text(SMALL_TOML.replace("max_steps = 60000", "max_steps = 3000"))
    summary = run_json("run", "--config", str(short), "--out", str(pathlib.Path(tmp) / "short"), expect=1)
    validate(summary, "summary")
    assert summary["status"] == 1 and not summary["passed"]


def case_enumerate(tmp):
    j = run_json("enumerate", "--dataset", "builtin")
    validate(j, "enumerate")
    assert j["pattern_count"] == 12 and j["extremal_count"] == 1, j
    assert not j["approximate"]
    text = run("enumerate", "--dataset", "builtin").stdout
    assert "12 patterns" in text and "1 extremal" in text, text


def case_constants(tmp):
    j = run_json("constants", "--dataset", "builtin")
    validate(j, "constants")
    c = j["constants"]
    assert c["D_max"] > c["D_min"] > 0
    assert abs(c["tau"] + c["epsilon"] * __import__("math").log(c["lambda"]) / c["D_max"]) < 1e-12 * c["tau"]
    assert sum(1 for cone in j["cones"] if cone["extremal"]) == 1


def case_phases_spurious(tmp):
    cfg = str(small_config(tmp))
    out = pathlib.Path(tmp) / "diag"
    phases = run_json("phases", "--config", cfg, "--out", str(out))
    validate(phases, "phases")
    assert phases["tau"] is not None
    spurious = run_json("spurious", "--config", cfg, "--out", str(out))
    validate(spurious, "spurious")
    assert spurious["passed"]
    validate(json.loads((out / "phases.json").read_text()), "phases")
    validate(json.loads((out / "spurious.json").read_text()), "spurious")
    no_temp_files(out)


def case_xor(tmp):
    out = pathlib.Path(tmp) / "xor"
    # at this sample size a sign identity may be inconclusive, which is a verdict failure and not an error
    p = subprocess.run([str(BIN), "xor", "--d", "4", "--samples", "100000", "--random", "4", "--quadrature", "6",
                        "--signs", "4", "--out", str(out), "--json"], capture_output=True, text=True)
    assert p.returncode in (0, 1), p.stderr
    j = json.loads(p.stdout)
    validate(j, "summary")
    assert j["extremal_count"] == 4
    assert [v["name"] for v in j["verdicts"]] == ["xor-four-extremals", "xor-quadrature-agreement",
                                                  "xor-sign-identities"]
    assert j["verdicts"][0]["passed"]
    assert (p.returncode == 0) == j["passed"]
    validate(json.loads((out / "xor.json").read_text()), "xor")
    no_temp_files(out)


def case_run_artifacts(tmp):
    cfg = str(small_config(tmp))
    a = pathlib.Path(tmp) / "a"
    b = pathlib.Path(tmp) / "b"
    summary = run_json("run", "--config", cfg, "--out", str(a))
    validate(summary, "summary")
    assert summary["passed"], summary
    run("run", "--config", cfg, "--out", str(b))
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), f"{n} differs between repeats"
    validate(json.loads((a / "summary.json").read_text()), "summary")
    validate(json.loads((a / "phases.json").read_text()), "phases")
    validate(json.loads((a / "spurious.json").read_text()), "spurious")
    validate(json.loads((a / "constants.json").read_text()), "constants")
    svgs = [p for p in a.iterdir() if p.suffix == ".svg"]
    assert svgs
    for p in svgs:
        root = ET.parse(p).getroot()
        assert root.tag == "{http://www.w3.org/2000/svg}svg", p
    no_temp_files(a)


def case_env_override(tmp):
    cfg = str(small_config(tmp))
    env_out = pathlib.Path(tmp) / "from-env"
    flag_out = pathlib.Path(tmp) / "from-flag"
    run("run", "--config", cfg, env={"ALIGN_LAB_OUT": str(env_out)})
    assert (env_out / "summary.json").exists()
    run("run", "--config", cfg, "--out", str(flag_out), env={"ALIGN_LAB_OUT": str(env_out / "unused")})
    assert (flag_out / "summary.json").exists()
    assert not (env_out / "unused").exists()
    run("run", "--config", cfg, cwd=tmp)
    assert (pathlib.Path(tmp) / "out" / "summary.json").exists()


def case_seeds(tmp):
    cfg = str(small_config(tmp))
    out = pathlib.Path(tmp) / "seeds"
    j = run_json("run", "--config", cfg, "--out", str(out), "--seeds", "3", "--jobs", "3")
    validate(j, "summary")
    assert [s["seed"] for s in j] == [0, 1, 2]
    for s in range(3):
        assert (out / f"seed-{s}" / "summary.json").exists()
    single = pathlib.Path(tmp) / "single"
    run("run", "--config", cfg, "--out", str(single), "--seed", "1")
    assert (single / "trace.csv").read_bytes() == (out / "seed-1" / "trace.csv").read_bytes()


def case_plot(tmp):
    cfg = str(small_config(tmp))
    run_dir = pathlib.Path(tmp) / "run"
    run("run", "--config", cfg, "--out", str(run_dir))
    plots = pathlib.Path(tmp) / "plots"
    j = run_json("plot", "--snapshots", str(run_dir / "snapshots.json"), "--times", "init", "final", "2.5",
                 "--out", str(plots))
    validate(j, "plot")
    assert sorted(j["files"]) == sorted(f"{k}-{t}.svg" for k in ("function", "polar") for t in ("init", "final"))
    assert len(j["notices"]) == 1 and "2.5" in j["notices"][0], j["notices"]
    for f in j["files"]:
        ET.parse(plots / f)
    assert (plots / "polar-final.svg").read_bytes() == (run_dir / "polar-final.svg").read_bytes()
    fresh = pathlib.Path(tmp) / "fresh"
    j = run_json("plot", "--config", cfg, "--times", "init", "2.5", "--out", str(fresh))
    validate(j, "plot")
    assert sorted(j["files"]) == sorted(f"{k}-{t}.svg" for k in ("function", "polar") for t in ("init", "t2.5"))
    run("plot", "--config", cfg, "--times", "1e9", "--out", str(fresh), expect=2)
    no_temp_files(plots)


CASES = {name[5:]: fn for name, fn in globals().items() if name.startswith("case_")}

if __name__ == "__main__":
    case = sys.argv[3]
    with tempfile.TemporaryDirectory(prefix="align-lab-cli-") as tmp:
        CASES[case](tmp)
    print(f"{case}: ok")
