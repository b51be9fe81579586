"""Multistart solution counts, whole-diagram assembly per regime, structural
verification reports and the dynamic stability cross-check.

Fold locations reused here were pinned in test_continuation by independent
oracles (extremum search, finite differences); the zero-threshold fold at
a = 20 is confirmed below by the count flip across it. Diagram shapes are
asserted against the piece decompositions the assembly claims to realize,
with the oracle-based verifier replayed on every regime.
"""

import dataclasses

import numpy as np
import pytest

from bifurcate.grid import DiscreteField, build_grid, laplacian_eigenpairs
from bifurcate.model import HarvestSpec, Nonlinearity, critical_cap
from bifurcate.solver import Problem, classify_state, newton_solve
from bifurcate.diagram import (
    REGIMES,
    AssemblyIncomplete,
    BifurcationDiagram,
    ClaimCheck,
    SolutionSet,
    VerificationReport,
    assemble_diagram,
    count_solutions,
    default_thread_count,
    diagram_solutions_at,
    stability_crosscheck,
    verify_structure,
)

# Fold of the stable/index-1 pair at a = 20 with the canonical threshold,
# confirmed by the extremum oracle in test_continuation.
C_FOLD_20 = 128.207253840662

# Same fold with the threshold at zero; the count flip 2/1/0 across this
# value in TestCountSolutions is its independent confirmation.
C_FOLD_20_M0 = 110.714875466

# Terminal folds of the sharp sheet exactly at the second eigenvalue.
C_FOLD_AT_LAM2 = 556.9477816224
C_FOLD_AT_LAM2_M0 = 513.0745650576

# The half-width of the four-solution window above the second eigenvalue
# and the three fold levels of the seven-piece structure at its midpoint.
DELTA_WINDOW = 0.962759859621
C_NATURAL_FOLD_NEG = -6.769673633
C_NATURAL_FOLD_POS = 6.349357946
C_FOLD_WINDOW = 568.670734113


@pytest.fixture(scope="module")
def domain():
    return build_grid(399, 1.0)


@pytest.fixture(scope="module")
def eigs(domain):
    return tuple(p.eigenvalue for p in laplacian_eigenpairs(domain, 2))


@pytest.fixture(scope="module")
def problem(domain):
    return Problem(domain, Nonlinearity(0.2, 3), HarvestSpec("bump"))


@pytest.fixture(scope="module")
def problem0(domain):
    return Problem(domain, Nonlinearity(0.0, 3), HarvestSpec("bump"))


@pytest.fixture(scope="module")
def diagram20(problem):
    return assemble_diagram(problem, 20.0, tol=1e-10)


@pytest.fixture(scope="module")
def diagram20_m0(problem0):
    return assemble_diagram(problem0, 20.0, tol=1e-10)


@pytest.fixture(scope="module")
def diagram_below(problem):
    return assemble_diagram(problem, 5.0, tol=1e-10)


@pytest.fixture(scope="module")
def diagram_lam1(problem, eigs):
    return assemble_diagram(problem, eigs[0], tol=1e-10)


@pytest.fixture(scope="module")
def diagram_lam2(problem, eigs):
    return assemble_diagram(problem, eigs[1], tol=1e-10)


@pytest.fixture(scope="module")
def diagram_lam2_m0(problem0, eigs):
    return assemble_diagram(problem0, eigs[1], tol=1e-10)


@pytest.fixture(scope="module")
def diagram_window(problem, eigs):
    return assemble_diagram(problem, eigs[1] + 0.5 * DELTA_WINDOW, tol=1e-10)


@pytest.fixture(scope="module")
def stable20(problem):
    amp = critical_cap(problem.nonlinearity, 20.0)
    phi = problem.modes()[0].eigenfunction
    return newton_solve(
        problem, DiscreteField(problem.domain, amp * phi.values), 20.0, 0.0
    )


class TestCountSolutions:
    def test_two_solutions_each_side_of_zero(self, problem0):
        for c in (-5.0, -1.0, 0.0):
            got = count_solutions(problem0, 20.0, c, n_starts=60, seed=0)
            assert got.count == 2
            assert got.morse_indices() == (0, 1)

    def test_zero_state_collapses_to_one_member(self, problem0):
        """Every start that lands on the trivial state must deduplicate into
        a single member even though relative distance is meaningless at zero
        norm."""
        got = count_solutions(problem0, 20.0, 0.0, n_starts=60, seed=0)
        norms = sorted(float(np.max(np.abs(m.u.values))) for m in got)
        assert len(norms) == 2
        assert norms[0] < 1e-8
        assert norms[1] > 1.0

    def test_no_solutions_beyond_fold(self, problem0):
        got = count_solutions(problem0, 20.0, C_FOLD_20_M0 + 0.5, n_starts=60, seed=0)
        assert got.count == 0
        assert len(got) == 0

    def test_count_flips_across_fold(self, problem0):
        lo = count_solutions(problem0, 20.0, C_FOLD_20_M0 - 0.1, n_starts=60, seed=0)
        at = count_solutions(problem0, 20.0, C_FOLD_20_M0 - 1e-7, n_starts=60, seed=0)
        hi = count_solutions(problem0, 20.0, C_FOLD_20_M0 + 0.1, n_starts=60, seed=0)
        assert (lo.count, at.count, hi.count) == (2, 1, 0)

    def test_four_solutions_in_window(self, problem, eigs):
        a = eigs[1] + 0.5 * DELTA_WINDOW
        c = 0.2 * C_NATURAL_FOLD_NEG
        got = count_solutions(problem, a, c, n_starts=200, seed=0)
        assert got.count == 4
        assert got.morse_indices() == (0, 1, 1, 2)

    def test_members_sorted_and_classified(self, problem0):
        got = count_solutions(problem0, 20.0, -1.0, n_starts=60, seed=0)
        norms = [float(np.sqrt(problem0.domain.inner(m.u.values, m.u.values)))
                 for m in got]
        assert norms == sorted(norms)
        for m in got:
            assert m.residual_norm < 1e-8

    def test_thread_pool_matches_sequential(self, problem0):
        seq = count_solutions(problem0, 20.0, -1.0, n_starts=60, seed=0, threads=1)
        par = count_solutions(problem0, 20.0, -1.0, n_starts=60, seed=0, threads=3)
        assert seq.count == par.count
        for m1, m2 in zip(seq, par):
            assert np.array_equal(m1.u.values, m2.u.values)

    def test_requires_minimum_starts(self, problem0):
        with pytest.raises(ValueError):
            count_solutions(problem0, 20.0, 0.0, n_starts=10, seed=0)

    def test_set_rejects_members_below_threshold(self, problem0):
        pt = newton_solve(problem0, DiscreteField.zero(problem0.domain), 20.0, -1.0)
        with pytest.raises(ValueError):
            SolutionSet((pt, pt), 20.0, -1.0, 60, 1e-4)


class TestThreadDefault:
    def test_reads_environment(self, monkeypatch):
        monkeypatch.setenv("BIFURCATE_THREADS", "3")
        assert default_thread_count() == 3

    def test_defaults_to_sequential(self, monkeypatch):
        monkeypatch.delenv("BIFURCATE_THREADS", raising=False)
        assert default_thread_count() == 1

    @pytest.mark.parametrize("raw", ["zero", "", "0", "-2"])
    def test_rejects_bad_values(self, monkeypatch, raw):
        monkeypatch.setenv("BIFURCATE_THREADS", raw)
        with pytest.raises(ValueError):
            default_thread_count()


class TestAssembly:
    def test_regime_labels_are_the_documented_five(self):
        assert REGIMES == (
            "below-lambda1",
            "at-lambda1",
            "between-lambda1-lambda2",
            "at-lambda2",
            "above-lambda2",
        )

    def test_between_two_pieces_joined_at_fold(self, diagram20):
        assert diagram20.regime == "between-lambda1-lambda2"
        assert diagram20.complete
        assert diagram20.segment is None
        assert set(diagram20.tags()) == {"Mstar", "Msharp"}
        assert len(diagram20.degenerate_points) == 1
        dp = diagram20.degenerate_points[0]
        assert dp.c == pytest.approx(C_FOLD_20, rel=1e-9)
        assert dp.kind == "fold-index0"

    def test_between_zero_threshold_fold(self, diagram20_m0):
        dp = diagram20_m0.degenerate_points[0]
        assert dp.c == pytest.approx(C_FOLD_20_M0, rel=1e-9)

    def test_branches_reach_the_c_floor(self, diagram20):
        for tag in ("Mstar", "Msharp"):
            br = diagram20.branch(tag)
            assert br.points[0].c == pytest.approx(-10.0, abs=1e-6)

    def test_stable_branch_monotone_decreasing_in_c(self, diagram20):
        br = diagram20.branch("Mstar")
        pts = br.points
        for p, q in zip(pts, pts[1:]):
            if q.c - p.c > 1e-12:
                assert np.all(q.u.values <= p.u.values + 1e-10)

    def test_at_lambda2_segment_and_sheets(self, diagram_lam2):
        assert diagram_lam2.regime == "at-lambda2"
        assert set(diagram_lam2.tags()) == {"Mflat", "Msharp", "Mstar"}
        seg = diagram_lam2.segment
        assert seg is not None
        assert seg.t_min == pytest.approx(-0.2, abs=1e-12)
        assert seg.t_max == pytest.approx(0.2, abs=1e-12)
        cs = sorted(dp.c for dp in diagram_lam2.degenerate_points)
        assert cs[-1] == pytest.approx(C_FOLD_AT_LAM2, rel=1e-9)

    def test_at_lambda2_zero_threshold(self, diagram_lam2_m0):
        seg = diagram_lam2_m0.segment
        assert seg.t_min == seg.t_max == 0.0
        cs = sorted(dp.c for dp in diagram_lam2_m0.degenerate_points)
        assert cs[-1] == pytest.approx(C_FOLD_AT_LAM2_M0, rel=1e-9)
        # the two sheets meet at the origin: one ends where the other begins
        sharp = diagram_lam2_m0.branch("Msharp")
        flat = diagram_lam2_m0.branch("Mflat")
        assert abs(sharp.t_values()[0]) < 0.1
        assert abs(flat.t_values()[-1]) < 0.1

    def test_window_seven_piece_structure(self, diagram_window):
        assert diagram_window.regime == "above-lambda2"
        assert set(diagram_window.tags()) == {"Mflat", "Mnatural", "Msharp", "Mstar"}
        cs = sorted(dp.c for dp in diagram_window.degenerate_points)
        assert len(cs) == 3
        assert cs[0] == pytest.approx(C_NATURAL_FOLD_NEG, rel=1e-6)
        assert cs[1] == pytest.approx(C_NATURAL_FOLD_POS, rel=1e-6)
        assert cs[2] == pytest.approx(C_FOLD_WINDOW, rel=1e-6)

    def test_at_lambda1_ray_and_crescent(self, diagram_lam1):
        assert diagram_lam1.regime == "at-lambda1"
        assert set(diagram_lam1.tags()) == {"ray", "Mstar"}
        ray = diagram_lam1.branch("ray")
        assert len(ray.points) == 41
        assert set(ray.morse_indices()) == {0}
        assert ray.t_values()[0] == pytest.approx(-0.2, abs=1e-12)
        assert ray.t_values()[-1] == pytest.approx(0.2, abs=1e-12)
        assert all(abs(p.c) < 1e-12 for p in ray.points)
        assert len(diagram_lam1.degenerate_points) == 1
        assert abs(diagram_lam1.degenerate_points[0].c) < 1e-9

    def test_below_single_stable_sweep(self, diagram_below):
        assert diagram_below.regime == "below-lambda1"
        assert set(diagram_below.tags()) == {"Mstar"}
        assert diagram_below.segment is None
        assert diagram_below.degenerate_points == ()
        br = diagram_below.branch("Mstar")
        assert br.points[0].c == pytest.approx(-10.0, abs=1e-6)
        assert br.points[-1].c == pytest.approx(10.0, abs=1e-6)

    def test_branch_lookup_by_unknown_tag(self, diagram20):
        with pytest.raises(KeyError):
            diagram20.branch("Mnatural")

    def test_rejects_nonpositive_growth_rate(self, problem):
        with pytest.raises(ValueError):
            assemble_diagram(problem, 0.0, tol=1e-10)

    def test_rejects_nonnegative_c_floor(self, problem):
        with pytest.raises(ValueError):
            assemble_diagram(problem, 20.0, c_min=1.0, tol=1e-10)

    def test_truncated_run_carries_partial_diagram(self, problem):
        with pytest.raises(AssemblyIncomplete) as err:
            assemble_diagram(problem, 20.0, tol=1e-10, max_points=5)
        partial = err.value.partial
        assert isinstance(partial, BifurcationDiagram)
        assert not partial.complete

    def test_diagram_validates_regime_label(self, problem):
        with pytest.raises(ValueError):
            BifurcationDiagram(problem, 20.0, "sideways", (), (), None, -10.0)


class TestDiagramSolutionsAt:
    def test_matches_oracle_membership(self, diagram20, problem):
        predicted = diagram_solutions_at(diagram20, -1.0)
        assert len(predicted) == 2
        assert sorted(p.morse_index for p in predicted) == [0, 1]
        for p in predicted:
            assert p.residual_norm < 1e-8

    def test_empty_beyond_the_fold(self, diagram20):
        assert diagram_solutions_at(diagram20, C_FOLD_20 + 1.0) == []


class TestVerifyStructure:
    @pytest.mark.parametrize("fixture", [
        "diagram_below",
        "diagram_lam1",
        "diagram20",
        "diagram20_m0",
        "diagram_lam2",
        "diagram_lam2_m0",
        "diagram_window",
    ])
    def test_all_regimes_pass(self, fixture, request):
        diag = request.getfixturevalue(fixture)
        report = verify_structure(diag, oracle_budget=60, seed=0)
        assert report.regime == diag.regime
        assert report.failures() == ()
        assert report.passed

    def test_between_report_claims(self, diagram20):
        report = verify_structure(diagram20, oracle_budget=60, seed=0)
        ids = [chk.claim for chk in report.checks]
        assert any(i.startswith("normal-form") for i in ids)
        assert any(i.startswith("count@") for i in ids)
        assert "stable-monotone-in-c" in ids
        assert "static-stability-criterion" in ids

    def test_at_lambda2_report_claims(self, diagram_lam2):
        report = verify_structure(diagram_lam2, oracle_budget=60, seed=0)
        ids = [chk.claim for chk in report.checks]
        assert "segment-second-eigenvalue-zero" in ids
        assert "czero-dichotomy" in ids

    def test_zero_threshold_cusp_claim(self, diagram_lam2_m0):
        report = verify_structure(diagram_lam2_m0, oracle_budget=60, seed=0)
        cusp = [chk for chk in report.checks if chk.claim == "cusp-flat-at-origin"]
        assert len(cusp) == 1
        assert cusp[0].passed
        assert cusp[0].measured < 0.3

    def test_window_report_claims(self, diagram_window):
        report = verify_structure(diagram_window, oracle_budget=60, seed=0)
        ids = [chk.claim for chk in report.checks]
        assert any(i.startswith("at-least-three@") for i in ids)
        assert "middle-sheet-slope-negative" in ids
        slope = next(c for c in report.checks
                     if c.claim == "middle-sheet-slope-negative")
        assert slope.measured < 0.0

    def test_report_failure_listing(self):
        bad = ClaimCheck("made-up", 1, 2, "exact", False)
        good = ClaimCheck("fine", 1, 1, "exact", True)
        report = VerificationReport("below-lambda1", 5.0, (good, bad))
        assert not report.passed
        assert report.failures() == (bad,)


class TestStabilityCrosscheck:
    def test_stable_state_attracts(self, stable20):
        assert stability_crosscheck(stable20) == "pass"

    def test_unstable_zero_state_repels(self, problem):
        zero = newton_solve(problem, DiscreteField.zero(problem.domain), 20.0, 0.0)
        assert stability_crosscheck(zero) == "pass"

    def test_index_two_interior_state_repels(self, diagram_window):
        nat = diagram_window.branch("Mnatural")
        mid = nat.points[len(nat.points) // 2]
        assert mid.morse_index == 2
        assert stability_crosscheck(mid) == "pass"

    def test_degenerate_segment_state(self, problem, eigs):
        psi = problem.modes()[1].eigenfunction
        pt = classify_state(
            problem, DiscreteField(problem.domain, 0.1 * psi.values), eigs[1], 0.0
        )
        assert pt.degenerate
        assert stability_crosscheck(pt) == "pass"

    def test_trivial_state_below_first_eigenvalue(self, problem):
        triv = newton_solve(problem, DiscreteField.zero(problem.domain), 5.0, 0.0)
        assert stability_crosscheck(triv) == "pass"

    def test_detects_a_misclassified_point(self, stable20):
        """A stable state relabeled as index 1 must flunk the dynamic test:
        the kick decays instead of growing."""
        forged = dataclasses.replace(stable20, morse_index=1)
        assert stability_crosscheck(forged) == "fail"
