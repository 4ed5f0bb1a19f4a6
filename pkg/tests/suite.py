"""Step laws shared by the test modules."""

from fractions import Fraction as F

from firstreturn.lattice_model import lazy_simple_walk, power_tail, simple_walk, validate_law


def drifted():
    return validate_law({"dim": 1, "family": "finite-atoms", "atoms": [[1, "4/5"], [-1, "1/5"]]})


def lazy_drifted_2d():
    # asymmetric, complex characteristic function
    return validate_law({"dim": 2, "family": "finite-atoms",
                         "atoms": [[0, 0, "1/3"], [1, 0, "1/3"], [-1, 1, "1/6"], [0, -1, "1/6"]]})


def skew_zero_mean_2d():
    return validate_law({"dim": 2, "family": "finite-atoms",
                         "atoms": [[0, 0, "1/4"], [2, 0, "1/4"], [-1, 1, "1/4"], [-1, -1, "1/4"]]})


def deterministic():
    return validate_law({"dim": 1, "family": "finite-atoms", "atoms": [[1, 1]]})


def finite_suite():
    return {
        "lazy_z3": lazy_simple_walk(3),
        "srw_z3": simple_walk(3),
        "lazy_z1": lazy_simple_walk(1),
        "drift_z1": drifted(),
        "lazy_drift_z2": lazy_drifted_2d(),
        "skew_z2": skew_zero_mean_2d(),
        "wide_z1": validate_law({"dim": 1, "family": "finite-atoms",
                                 "atoms": [[-3, F(1, 8)], [-1, F(3, 8)], [2, F(1, 4)], [3, F(1, 4)]]}),
    }


def power_suite():
    return {"tail_0.7": power_tail(0.7), "tail_1.5": power_tail(1.5)}


# one line per acceptance criterion, printed at the end of the session by conftest
ACCEPTANCE_LINES: list[str] = []
