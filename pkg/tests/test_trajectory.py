import numpy as np
import pandas as pd
import pytest

from skclib.errors import EmptyInputError, SizeError
from skclib.spectral import SpectralKoopman, discretize, loss_pred
from skclib.trajectory import Trajectory, TransitionBatch


def ramp(T=4):
    return Trajectory(states=np.arange(2 * (T + 1), dtype=float).reshape(T + 1, 2), controls=np.arange(T),
                      latents=(np.arange(T + 1) * (1 + 1j))[:, None])


class TestTrajectory:
    def test_aligned_drops_final_state(self):
        z, u = ramp().aligned()
        assert len(z) == len(u) == 4
        assert z[-1, 0] == 3 * (1 + 1j)

    def test_aligned_without_latents(self):
        tr = Trajectory(states=np.zeros((3, 1)), controls=np.zeros(2))
        with pytest.raises(SizeError):
            tr.aligned()

        assert tr.aligned(use="states")[0].shape == (2, 1)

    def test_default_rewards(self):
        assert np.array_equal(ramp().rewards, np.zeros(4))

    def test_to_csv(self, tmp_path):
        path = str(tmp_path / "traj.csv")
        ramp().to_csv(path)
        df = pd.read_csv(path)
        assert list(df.columns) == ["t", "state_0", "state_1", "action_0", "reward"]
        assert len(df) == 4


class TestTransitionBatch:
    def test_from_trajectories(self):
        batch = TransitionBatch.from_trajectories([ramp(3), ramp(2)])
        assert len(batch) == 5
        assert np.array_equal(batch.z_next[:3] - batch.z[:3], np.full(3, 1 + 1j)[:, None])

    def test_from_states(self):
        batch = TransitionBatch.from_trajectories([ramp(3)], use="states")
        assert batch.z.shape == (3, 2)

    def test_no_trajectories(self):
        with pytest.raises(EmptyInputError):
            TransitionBatch.from_trajectories([])

    def test_shape_mismatch(self):
        with pytest.raises(SizeError):
            TransitionBatch(np.zeros((3, 2)), np.zeros(3), np.zeros((3, 3)))

    def test_control_count_mismatch(self):
        with pytest.raises(ValueError):
            TransitionBatch(np.zeros((3, 2)), np.zeros(2), np.zeros((3, 2)))

    def test_empty_lists(self):
        batch = TransitionBatch([], [], [])
        assert len(batch) == 0
        with pytest.raises(EmptyInputError):
            loss_pred(discretize(SpectralKoopman([-0.1], [1.0], [[1.0]])), batch)

    def test_empty_batch(self):
        batch = TransitionBatch(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)))
        with pytest.raises(EmptyInputError):
            batch.require_nonempty()

    def test_head(self):
        assert len(TransitionBatch.from_trajectories([ramp(4)]).head(2)) == 2
