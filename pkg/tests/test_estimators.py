import numpy as np
import pytest
from sklearn.base import clone

from ugdyn.cnf import encode
from ugdyn.dynamics import DynamicsConfig, integrate
from ugdyn.estimators import DynamicsSolver, FsleEstimator, VicinityResidency
from ugdyn.exceptions import InvalidInputError
from ugdyn.instance import generate_polygon_instance, satisfied_count


def test_solver_on_sat_instance():
    inst = generate_polygon_instance(4, 3, 0, seed=1)
    est = DynamicsSolver(t_end=100, random_state=0).fit(inst)
    assert est.solved_ and est.score() == 1.0
    assert satisfied_count(inst, est.predict()) == inst.n_eq
    assert np.array_equal(est.predict(inst), est.assignment_)


def test_solver_params_and_clone():
    est = DynamicsSolver(alpha=1.5, random_state=3)
    assert clone(est).get_params()["alpha"] == 1.5
    with pytest.raises(InvalidInputError):
        DynamicsSolver(random_state=-1).fit(generate_polygon_instance(3, 2, 0, seed=0))
    with pytest.raises(InvalidInputError):
        DynamicsSolver().fit("not an instance")


def test_solver_unsat_best():
    inst = generate_polygon_instance(4, 3, 1, seed=2)
    est = DynamicsSolver(t_end=60, random_state=1).fit(inst)
    assert not est.solved_
    assert est.best_satisfied_ <= inst.n_eq - 1
    assert satisfied_count(inst, est.best_assignment_) == est.best_satisfied_


def test_residency_estimator_matches_function():
    inst = generate_polygon_instance(4, 3, 1, seed=2)
    f = encode(inst)
    recs = [integrate(f, DynamicsConfig(seed=s, t_end=60)) for s in range(3)]
    est = VicinityResidency(delta_grid=(0.5, 1.0), radius=0.2, norm="per_spin")
    per = est.fit_transform(recs, instance=inst)
    assert per.shape == (3, 2)
    from ugdyn.analysis import residency

    ref = residency(recs, f, inst, (0.5, 1.0), 0.2, norm="per_spin")
    assert np.allclose(est.table_.y_values, ref.y_values, equal_nan=True)
    assert len(est.diagnostics(recs)) == 3


def test_fsle_estimator():
    inst = generate_polygon_instance(4, 2, 1, seed=1)
    est = FsleEstimator(alpha=2.0, n_seeds=2, n_segments=2, t_warmup=20, random_state=4).fit(inst)
    assert len(est.estimates_) == 2 and np.isfinite(est.lambda_mean_)
    again = FsleEstimator(alpha=2.0, n_seeds=2, n_segments=2, t_warmup=20, random_state=4).fit(inst)
    assert again.lambda_mean_ == est.lambda_mean_
