"""Acceptance suite: every criterion at its stated tolerance, plus the corpus contract.

Run directly (``python tests/test_acceptance.py``) for the pass/fail lines
alone; under pytest the same lines appear in the terminal summary.
"""

import json
import time

import pytest

from heatlab.acceptance import CRITERIA, run_all
from heatlab.cli import emit_corpus

BUDGETS = {"c1": 10.0, "c2": 60.0, "c3": 60.0, "c7": 60.0}
CORPUS_BUDGET = 300.0


def _line(res) -> str:
    return f"{res.summary()}  ({res.elapsed:.1f} s)"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory, pytestconfig):
    out = tmp_path_factory.mktemp("corpus")
    start = time.perf_counter()
    code, index, results = emit_corpus(out, seed=0)
    total = time.perf_counter() - start
    lines = [_line(r) for r in results]
    pytestconfig.acceptance_lines = lines
    lines.append(f"corpus wall time {total:.1f} s (budget {CORPUS_BUDGET:.0f} s)")
    return {"code": code, "index": index, "results": {r.id: r for r in results}, "total": total, "out": out}


@pytest.mark.parametrize("cid", list(CRITERIA))
def test_criterion(corpus, cid):
    res = corpus["results"][cid]
    print(_line(res))
    assert res.passed, json.dumps(res.to_dict()["metrics"], default=str)[:2000]
    if cid in BUDGETS:
        assert res.elapsed < BUDGETS[cid]


def test_corpus_contract(corpus):
    index = corpus["index"]
    ids = [e["id"] for e in index["criteria"]]
    assert sorted(ids) == sorted(CRITERIA) and len(ids) == len(set(ids))
    assert corpus["code"] == (0 if index["all_passed"] else 2)
    for e in index["criteria"]:
        body = json.loads((corpus["out"] / e["report"]).read_text())
        assert body["config_hash"] == index["config_hash"]
        assert body["passed"] == e["passed"]
    assert corpus["total"] < CORPUS_BUDGET


def test_corpus_reports_are_reproducible(corpus):
    again = run_all(seed=0, ids=["c1", "c6", "c7", "c8"])
    for res in again:
        saved = json.loads((corpus["out"] / f"{res.id}.json").read_text())
        fresh = json.loads(json.dumps(res.to_dict()))
        assert {k: saved[k] for k in fresh} == fresh


if __name__ == "__main__":
    for r in run_all():
        print(_line(r), flush=True)
