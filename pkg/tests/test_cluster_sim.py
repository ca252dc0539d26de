import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dissd.cluster_sim import Cluster, CommLedger, Machine
from dissd.synth_data import make_ground_truth, sample_cluster


def small_cluster(m=2, p=3, threads=1):
    gt = make_ground_truth(p, 1, block=1, offdiag=0.0)
    return Cluster.from_data(sample_cluster(gt, "square-linear", m, 4, 6, seed=1), threads)


def test_broadcast_counts_and_freezes():
    cl = small_cluster(2, 3)
    out = cl.broadcast(np.arange(3.0))
    assert cl.ledger.floats_down == 6
    cl.broadcast(np.zeros(3))
    assert cl.ledger.floats_down == 12
    with pytest.raises(ValueError):
        out[0] = 5.0


def test_gather_reduce_examples():
    cl = small_cluster(2, 2)
    assert cl.gather_scalars([1.0, 3.0]) == 2.0
    np.testing.assert_array_equal(cl.gather_reduce([np.array([1.0, 0]), np.array([0, 1.0])]), [0.5, 0.5])
    assert cl.ledger.floats_up == 2 + 4


def test_gather_reduce_names_missing_machine():
    cl = small_cluster(3, 2)
    with pytest.raises(ValueError, match="machine 3"):
        cl.gather_reduce([1.0, 2.0])
    with pytest.raises(ValueError, match="machine 2"):
        cl.gather_reduce([1.0, None, 2.0])


@given(st.lists(st.floats(-1e12, 1e12), min_size=4, max_size=4))
def test_reduce_is_thread_independent(vals):
    a, b = small_cluster(4, 2, 1), small_cluster(4, 2, 8)
    ra = a.gather_reduce(a.run_on_workers(lambda mc: np.array([vals[mc.id - 1], mc.x.sum()])))
    rb = b.gather_reduce(b.run_on_workers(lambda mc: np.array([vals[mc.id - 1], mc.x.sum()])))
    assert ra.tobytes() == rb.tobytes()


def test_workers_return_in_machine_order():
    cl = small_cluster(5, 2, threads=4)
    assert cl.run_on_workers(lambda mc: mc.id) == [1, 2, 3, 4, 5]


def test_only_master_holds_unlabeled_rows():
    x, y = np.ones((2, 2)), np.ones(2)
    with pytest.raises(ValueError):
        Cluster((Machine(1, x, y), Machine(2, x, y, np.ones((1, 2)))))
    with pytest.raises(ValueError):
        Cluster((Machine(2, x, y),))
    cl = small_cluster(2, 3)
    assert cl.master.covariates().shape == (6, 3)
    assert cl.machines[1].covariates().shape == (4, 3)


def test_ledger_snapshot_and_total():
    led = CommLedger(3, 4, 1)
    snap = led.snapshot()
    led.floats_up += 1
    assert snap.total == 7 and led.total == 8


def test_workers_see_only_their_machine():
    # the task receives a Machine value; it has no handle on the cluster
    cl = small_cluster(3, 2)
    seen = cl.run_on_workers(lambda mc: (type(mc).__name__, hasattr(mc, "machines")))
    assert seen == [("Machine", False)] * 3
