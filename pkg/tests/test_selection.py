import math

import numpy as np
import pytest

from conftest import mc_table
from wgeesel.data import MeanModelSpec
from wgeesel.dropout import DropoutSpec
from wgeesel.selection import (
    CRITERIA,
    CandidateModel,
    JointSelector,
    argmin_with_ties,
    enumerate_candidates,
    select,
)
from wgeesel.simlab import TABLE1_MEANS

NAMES = ("x1", "x2", "x3")


def test_table1_candidate_count():
    cands = enumerate_candidates(NAMES, TABLE1_MEANS, ("IND", "EXC", "AR1"))
    assert len(cands) == 18
    assert len({c.label for c in cands}) == 18


def test_all_subsets_single_covariate():
    cands = enumerate_candidates(("a",), "all-subsets", ("EXC",))
    assert [c.label for c in cands] == ["1/EXC", "a/EXC"]


def test_duplicate_spec_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        enumerate_candidates(NAMES, [("x1",), ("x1",)])


def test_subset_cap():
    with pytest.raises(ValueError, match="cap"):
        enumerate_candidates(tuple(f"v{k}" for k in range(7)), "all-subsets", max_subsets=64)


def test_unstructured_not_selectable():
    with pytest.raises(ValueError):
        CandidateModel(MeanModelSpec(()), "UNSTRUCTURED")


def test_ties_prefer_fewer_parameters_then_order():
    assert argmin_with_ties([3.0, 1.0, 1.0], [5, 7, 6]) == (2, True)
    assert argmin_with_ties([1.0, 1.0], [6, 6]) == (0, True)
    assert argmin_with_ties([2.0, 1.0], [6, 6]) == (1, False)
    assert argmin_with_ties([math.inf, math.inf], [1, 1]) == (None, False)


def test_single_candidate_is_argmin(sim_dataset):
    cands = enumerate_candidates(NAMES, [("x1", "x2")], ("EXC",))
    table = select(sim_dataset, cands, DropoutSpec())
    assert len(table.rows) == 1
    assert all(table.best[c] == 0 for c in CRITERIA)


def test_table_outputs(sim_dataset):
    cands = enumerate_candidates(NAMES, TABLE1_MEANS, ("IND", "EXC", "AR1"))
    table = select(sim_dataset, cands, DropoutSpec())
    lines = table.to_tsv().splitlines()
    assert len(lines) == 19
    header = lines[0].split("\t")
    assert header[:3] == ["label", "mean", "structure"] and "JEAIC" in header and "selected_by" in header
    text = table.to_text()
    assert text.count("*") >= 4 and "JEBIC  selects" in text
    for c in CRITERIA:
        k = table.best[c]
        assert table.column(c)[k] == np.min(table.column(c))


def test_infeasible_candidates_never_selected(sim_dataset):
    cands = enumerate_candidates(NAMES, TABLE1_MEANS, ("IND", "EXC", "AR1"))
    table = select(sim_dataset, cands, DropoutSpec())
    for c in ("JEAIC", "JEBIC"):
        k = table.best[c]
        assert table.rows[k].el_status == "solved"
    bad = [r for r in table.rows if r.el_status != "solved"]
    assert all(r.values["JEAIC"] == math.inf for r in bad)


def test_parallel_matches_serial(sim_dataset):
    cands = enumerate_candidates(NAMES, TABLE1_MEANS[:2], ("IND", "EXC"))
    a = select(sim_dataset, cands, DropoutSpec(), n_jobs=1).to_tsv()
    b = select(sim_dataset, cands, DropoutSpec(), n_jobs=2).to_tsv()
    assert a == b


def test_joint_selector(sim_dataset):
    sel = JointSelector(candidates=list(TABLE1_MEANS), criterion="JEBIC").fit(sim_dataset)
    assert sel.best_candidate_.structure in ("IND", "EXC", "AR1")
    mu = sel.predict(sim_dataset)
    assert mu.shape == (sim_dataset.n, sim_dataset.T) and np.all((mu > 0) & (mu < 1))
    with pytest.raises(ValueError):
        JointSelector(criterion="AIC").fit(sim_dataset)


@pytest.mark.slow
def test_jebic_n200_selects_truth_often():
    assert mc_table("n200_m0.2").rate("JEBIC", "x1+x2/EXC") >= 0.70
