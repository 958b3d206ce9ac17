# test_fixtures.py
import sys
import os
from math import sqrt

import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))
from services.errors import FixtureError
from services.fixtures import FIXTURE_DIR, load_fixture, parse_fixture, validate_fixture, write_fixture
from services.model import sample_binary, sample_gaussian


@pytest.mark.parametrize("name,message", [
    ("syk_n32_k30.txt", "OK: N=32 K=30 (+:15 −:15)"),
    ("syk_n34_k36.txt", "OK: N=34 K=36 (+:18 −:18)"),
])
def test_shipped_fixtures(name, message):
    report = validate_fixture(FIXTURE_DIR / name)
    assert report["message"] == message
    assert report["shipped"]


def test_load_shipped_fixture():
    cs = load_fixture(FIXTURE_DIR / "syk_n32_k30.txt")
    assert (cs.N, cs.K) == (32, 30)
    assert cs.C == pytest.approx(1 / sqrt(30))


def test_duplicate_tuple_names_line(tmp_path):
    path = tmp_path / "dup.txt"
    path.write_text("N=8\nC=auto\n+ 1 2 3 4\n- 1 2 3 5\n+ 1 2 3 4\n- 2 3 4 5\n")
    with pytest.raises(FixtureError, match="duplicate") as e:
        validate_fixture(path)
    assert e.value.line_no == 5
    assert "first on line 3" in str(e.value)


@pytest.mark.parametrize("text,line_no", [
    ("N=8\nC=auto\n+ 2 1 3 4\n", 3),
    ("N=8\nC=auto\n+ 1 2 3 9\n", 3),
    ("N=8\nC=auto\n* 1 2 3 4\n", 3),
    ("N=8\nC=fast\n", 2),
    ("+ 1 2 3 4\n", 1),
])
def test_malformed_lines(text, line_no):
    with pytest.raises(FixtureError) as e:
        parse_fixture(text)
    assert e.value.line_no == line_no


def test_unbalanced_binary_fixture(tmp_path):
    path = tmp_path / "unbalanced.txt"
    path.write_text("N=8\nC=auto\n+ 1 2 3 4\n+ 1 2 3 5\n")
    with pytest.raises(FixtureError, match="unbalanced"):
        validate_fixture(path)


def test_write_then_load(tmp_path):
    binary = sample_binary(16, 32, seed=7)
    assert load_fixture(write_fixture(binary, tmp_path / "b.txt")) == binary
    gaussian = sample_gaussian(12, 20, seed=1)
    assert load_fixture(write_fixture(gaussian, tmp_path / "g.txt")) == gaussian
