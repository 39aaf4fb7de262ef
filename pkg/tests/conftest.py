import sys
import textwrap

import numpy as np
import pytest

from mipbpe.cellspace import OPS, edge_count, genotype_from_matrix
from mipbpe.evaluators import ArchSet
from mipbpe.hyperspace import default_preset


@pytest.fixture
def preset():
    return default_preset()


@pytest.fixture
def stub_command(tmp_path):
    """A stub trainer whose behaviour depends on the first normal-cell op.

    none -> sleeps past any short timeout, skip_connect -> writes garbage,
    max_pool_3x3 -> exits 3, anything else -> writes 0.5 (plus 0.01 per
    'sep_conv' op) to result.txt.
    """
    script = tmp_path / "stub.py"
    script.write_text(textwrap.dedent("""
        import os, sys, time
        wd = os.environ["BPE_WORKDIR"]
        geno = open(os.path.join(wd, "genotype.txt")).read()
        assert open(os.path.join(wd, "bpe.cfg")).read().strip()
        first = geno.split(";")[0].split(":")[1].strip()
        counter = os.path.join(os.path.dirname(os.path.abspath(__file__)), "calls.log")
        with open(counter, "a") as fh:
            fh.write(first + "\\n")
        if first == "none":
            time.sleep(30)
        elif first == "skip_connect":
            open("result.txt", "w").write("abc")
        elif first == "max_pool_3x3":
            sys.exit(3)
        else:
            open("result.txt", "w").write(str(0.5 + 0.01 * geno.count("sep_conv")))
    """))
    return f"{sys.executable} {script}", tmp_path / "calls.log"


def archs_with_first_ops(first_ops, M=2, seed=0):
    rng = np.random.default_rng(seed)
    gs = []
    for op in first_ops:
        ops = rng.integers(0, 4, size=(2, edge_count(M)))  # conv ops only elsewhere
        ops[0, 0] = OPS.index(op)
        gs.append(genotype_from_matrix(M, ops))
    return ArchSet(tuple(gs), tuple(f"g{i}" for i in range(len(gs))))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
