import numpy as np
import pytest

from app.core.control_grid import ControlWord
from app.core.errors import CapacityError, InputValidationError
from app.core.param_derivation import DiscretizationPlan
from app.core.sphere_net import build_sigma_net
from app.core.system_model import ProblemInstance
from app.services.funnel_assembly import (
    FunnelCloud, attainable_slice, build_bundle, build_funnel, dedupe_points,
)
from app.services.set_metrics import directed_distance, hausdorff_funnel


@pytest.fixture
def nine_word_bundle(integrator, unit_instance, nine_word_plan, line_net):
    return build_bundle(integrator, unit_instance, nine_word_plan, line_net)


class TestBundle:
    def test_one_trajectory_per_word(self, nine_word_bundle):
        assert len(nine_word_bundle) == 9
        assert nine_word_bundle.states.shape == (9, 3, 1)
        assert nine_word_bundle.words[0] == ControlWord((0, 0), (0, 0))
        assert nine_word_bundle.metadata["words"] == 9
        assert nine_word_bundle.metadata["net_points"] == 2

    def test_oracle_samples_between_nodes(self, integrator, unit_instance, nine_word_plan, line_net):
        bundle = build_bundle(integrator, unit_instance, nine_word_plan, line_net, mode="oracle", substeps=4)
        assert len(bundle.times) == 9
        assert bundle.node_states().shape == (9, 3, 1)
        assert bundle.trajectory(3).substeps == 4

    def test_chunks_do_not_change_states(self, rotator, planar_instance):
        plan = DiscretizationPlan.direct(planar_instance, beta=2.0, N=3, q=2, sigma=1.0)
        net = build_sigma_net(2, 1.0)
        whole = build_bundle(rotator, planar_instance, plan, net)
        chunked = build_bundle(rotator, planar_instance, plan, net, chunk_size=7)
        np.testing.assert_array_equal(whole.states, chunked.states)

    def test_unknown_mode(self, integrator, unit_instance, nine_word_plan, line_net):
        with pytest.raises(InputValidationError):
            build_bundle(integrator, unit_instance, nine_word_plan, line_net, mode="midpoint")

    def test_net_dimension_must_match(self, integrator, unit_instance, nine_word_plan):
        with pytest.raises(InputValidationError):
            build_bundle(integrator, unit_instance, nine_word_plan, build_sigma_net(2, 1.0))

    def test_word_cap(self, integrator, unit_instance, nine_word_plan, line_net):
        with pytest.raises(CapacityError):
            build_bundle(integrator, unit_instance, nine_word_plan, line_net, cap=4)

    def test_zero_budget_gives_single_trajectory(self, affine, line_net):
        instance = ProblemInstance(0.0, 1.0, np.array([1.0]), 2.0, 0.0)
        plan = DiscretizationPlan.direct(instance, beta=1.0, N=4, q=2, sigma=1.0)
        bundle = build_bundle(affine, instance, plan, line_net)
        assert len(bundle) == 1
        # Euler for x' = x from 1: (1 + 1/4)^k
        np.testing.assert_allclose(bundle.states[0, :, 0], 1.25 ** np.arange(5))


class TestSlices:
    def test_nine_word_slice_sizes(self, nine_word_bundle):
        sizes = [len(attainable_slice(nine_word_bundle, t)) for t in (0.0, 0.5, 1.0)]
        assert sizes == [1, 3, 5]
        np.testing.assert_allclose(np.sort(attainable_slice(nine_word_bundle, 1.0)[:, 0]),
                                   [-1.0, -0.5, 0.0, 0.5, 1.0])

    def test_slice_between_nodes_interpolates(self, nine_word_bundle):
        np.testing.assert_allclose(np.sort(attainable_slice(nine_word_bundle, 0.25)[:, 0]), [-0.25, 0.0, 0.25])

    @pytest.mark.parametrize("t", [-0.1, 1.5])
    def test_outside_horizon(self, nine_word_bundle, t):
        with pytest.raises(InputValidationError):
            attainable_slice(nine_word_bundle, t)

    @pytest.mark.parametrize("N, q", [(2, 4), (4, 2), (4, 4)])
    def test_refined_slices_contain_coarse_slices(self, integrator, unit_instance, nine_word_bundle,
                                                  line_net, N, q):
        fine = DiscretizationPlan.direct(unit_instance, beta=2.0, N=N, q=q, sigma=1.0)
        fine_bundle = build_bundle(integrator, unit_instance, fine, line_net)
        reference = np.linspace(-1.0, 1.0, 101)[:, None]
        for t in (0.5, 1.0):
            coarse_slice = attainable_slice(nine_word_bundle, t)
            fine_slice = attainable_slice(fine_bundle, t)
            assert len(fine_slice) >= len(coarse_slice)
            assert directed_distance(coarse_slice, fine_slice) <= 1e-12
            assert directed_distance(reference, fine_slice) <= directed_distance(reference, coarse_slice) + 1e-12


class TestDedupe:
    def test_close_points_merge_in_order(self):
        points = np.array([[1.0, 0.0], [0.0, 0.0], [1.0 + 1e-12, 0.0], [0.0, 0.0]])
        np.testing.assert_array_equal(dedupe_points(points), [[1.0, 0.0], [0.0, 0.0]])

    def test_distinct_points_survive(self):
        points = np.array([[0.0], [1e-6], [2e-6]])
        assert len(dedupe_points(points)) == 3

    def test_empty(self):
        assert len(dedupe_points(np.empty((0, 2)))) == 0


class TestFunnel:
    def test_cloud_layout(self, nine_word_bundle):
        cloud = build_funnel(nine_word_bundle)
        assert cloud.slice_sizes() == [1, 3, 5]
        assert cloud.size == 9
        points = cloud.points()
        assert points.shape == (9, 2)
        np.testing.assert_array_equal(points[:, 0], [0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0])
        np.testing.assert_array_equal(cloud.indices(), [0, 1, 1, 1, 2, 2, 2, 2, 2])

    def test_euler_funnel_matches_oracle_for_integrator(self, integrator, unit_instance, line_net):
        plan = DiscretizationPlan.direct(unit_instance, beta=2.0, N=4, q=4, sigma=1.0)
        euler = build_funnel(build_bundle(integrator, unit_instance, plan, line_net))
        oracle = build_funnel(build_bundle(integrator, unit_instance, plan, line_net, mode="oracle", substeps=8))
        assert euler.slice_sizes() == oracle.slice_sizes()
        assert hausdorff_funnel(euler, oracle).hausdorff <= 1e-12

    def test_cloud_from_slices(self):
        cloud = FunnelCloud(times=np.array([0.0, 1.0]), slices=[np.zeros((1, 2)), np.ones((2, 2))])
        assert cloud.size == 3
        np.testing.assert_array_equal(cloud.points()[-1], [1.0, 1.0, 1.0])
