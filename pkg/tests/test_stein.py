import struct

import numpy as np
import pytest

from hdexplain.data import gen_two_moons
from hdexplain.errors import ModelFormatError, UnsupportedVariantError
from hdexplain.nnet import MLPClassifier, TrainConfig, train
from hdexplain.stein import (
    IMQKernel,
    LinearKernel,
    RBFKernel,
    ScoreCache,
    SteinPoint,
    kernel_by_name,
    ksd_ustat,
    ksd_vstat,
    load_cache,
    local_scale_gamma,
    make_stein_point,
    make_stein_points,
    median_heuristic_gamma,
    save_cache,
    stein_gram,
    stein_kernel,
    stein_kernel_profile,
)

ALL_KERNELS = [
    ("linear", LinearKernel()),
    ("rbf", RBFKernel(0.7)),
    ("imq", IMQKernel(1.3, -0.4)),
]


def random_pairs(count, dim, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield rng.normal(0, 2, size=dim), rng.normal(0, 2, size=dim)


def fd_gradient(fn, za, zb, wrt, step=1e-6):
    grad = np.zeros_like(za)
    for j in range(len(za)):
        up_a, up_b = za.copy(), zb.copy()
        dn_a, dn_b = za.copy(), zb.copy()
        if wrt == "a":
            up_a[j] += step
            dn_a[j] -= step
        else:
            up_b[j] += step
            dn_b[j] -= step
        grad[j] = (fn(up_a, up_b) - fn(dn_a, dn_b)) / (2 * step)
    return grad


def fd_trace_hessian(fn, za, zb, step=1e-4):
    total = 0.0
    for j in range(len(za)):
        pp_a, pp_b = za.copy(), zb.copy()
        pm_a, pm_b = za.copy(), zb.copy()
        mp_a, mp_b = za.copy(), zb.copy()
        mm_a, mm_b = za.copy(), zb.copy()
        pp_a[j] += step
        pp_b[j] += step
        pm_a[j] += step
        pm_b[j] -= step
        mp_a[j] -= step
        mp_b[j] += step
        mm_a[j] -= step
        mm_b[j] -= step
        total += (fn(pp_a, pp_b) - fn(pm_a, pm_b) - fn(mp_a, mp_b) + fn(mm_a, mm_b)) / (4 * step**2)
    return total


def rel_err(got, want):
    scale = max(float(np.linalg.norm(np.atleast_1d(want))), 1e-9)
    return float(np.linalg.norm(np.atleast_1d(got - want))) / scale


class TestKernelValues:
    def test_rbf_coincident(self):
        k = RBFKernel(2.0)
        z = np.array([0.3, -1.0])
        assert k.eval(z, z) == 1.0

    def test_rbf_direct_formula(self):
        k = RBFKernel(0.5)
        got = k.eval(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
        assert abs(got - np.exp(-0.5)) < 1e-15

    def test_imq_coincident_unit_c(self):
        k = IMQKernel(1.0, -0.5)
        z = np.array([2.0, 3.0])
        assert k.eval(z, z) == 1.0

    def test_linear_is_dot_product(self):
        k = LinearKernel()
        assert k.eval(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            LinearKernel().eval(np.zeros(2), np.zeros(3))

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            RBFKernel(0.0)
        with pytest.raises(ValueError):
            IMQKernel(0.0, -0.5)
        with pytest.raises(ValueError):
            IMQKernel(1.0, -1.0)
        with pytest.raises(ValueError):
            IMQKernel(1.0, 0.0)

    def test_kernel_by_name(self):
        assert isinstance(kernel_by_name("linear"), LinearKernel)
        assert kernel_by_name("rbf", gamma=0.2).gamma == 0.2
        imq = kernel_by_name("imq", c=2.0, beta=-0.3)
        assert imq.c == 2.0 and imq.beta == -0.3
        with pytest.raises(ValueError):
            kernel_by_name("rbf")
        with pytest.raises(ValueError):
            kernel_by_name("cubic")


class TestKernelGradients:
    def test_rbf_imq_gradients_vanish_at_coincidence(self):
        z = np.array([0.5, -0.2, 1.0])
        for _, kernel in ALL_KERNELS[1:]:
            assert np.allclose(kernel.grad_a(z, z), 0.0)
            assert np.allclose(kernel.grad_b(z, z), 0.0)

    def test_linear_gradient_definition(self):
        k = LinearKernel()
        assert k.grad_a(np.array([1.0, 2.0]), np.array([3.0, 4.0])).tolist() == [3.0, 4.0]
        assert k.grad_b(np.array([1.0, 2.0]), np.array([3.0, 4.0])).tolist() == [1.0, 2.0]

    @pytest.mark.parametrize("name,kernel", ALL_KERNELS)
    def test_gradients_match_finite_differences(self, name, kernel):
        for i, (za, zb) in enumerate(random_pairs(70, 4, seed=hash(name) % 2**32)):
            got_a = kernel.grad_a(za, zb)
            got_b = kernel.grad_b(za, zb)
            want_a = fd_gradient(kernel.eval, za, zb, "a")
            want_b = fd_gradient(kernel.eval, za, zb, "b")
            assert rel_err(got_a, want_a) <= 1e-6, (name, i)
            assert rel_err(got_b, want_b) <= 1e-6, (name, i)


class TestTraceHessian:
    def test_linear_equals_dimension(self):
        k = LinearKernel()
        assert k.trace_hessian(np.zeros(5), np.ones(5)) == 5.0

    def test_rbf_at_coincidence(self):
        k = RBFKernel(1.0)
        z = np.zeros(3)
        assert abs(k.trace_hessian(z, z) - 6.0) < 1e-15

    @pytest.mark.parametrize("name,kernel", ALL_KERNELS)
    def test_matches_nested_finite_differences(self, name, kernel):
        for i, (za, zb) in enumerate(random_pairs(70, 3, seed=(hash(name) + 1) % 2**32)):
            got = kernel.trace_hessian(za, zb)
            want = fd_trace_hessian(kernel.eval, za, zb)
            assert rel_err(got, want) <= 1e-4, (name, i)


@pytest.fixture(scope="module")
def moons():
    return gen_two_moons(200, 0.1, seed=5)


@pytest.fixture(scope="module")
def trained(moons):
    return train(moons, TrainConfig(seed=5, epochs=60))


def zero_model():
    dims = [2, 3, 2]
    return MLPClassifier(dims, [np.zeros((2, 3)), np.zeros((3, 2))], [np.zeros(3), np.zeros(2)])


class TestSteinPoints:
    def test_zero_model_point(self):
        point = make_stein_point(zero_model(), np.array([0.0, 0.0]), 1, "raw")
        assert point.z.tolist() == [0.0, 0.0, 0.0, 1.0]
        assert np.allclose(point.score[:2], 0.0)
        assert np.allclose(point.score[2:], -np.log(2.0))

    def test_raw_dimension_is_d_plus_l(self, trained):
        point = make_stein_point(trained, np.array([0.1, 0.2]), 0, "raw")
        assert point.dim == 2 + 2

    def test_last_layer_dimension(self, trained):
        point = make_stein_point(trained, np.array([0.1, 0.2]), 0, "last-layer")
        assert point.dim == trained.layer_dims[-2] + 2

    def test_score_log_prob_block_normalized(self, trained, moons):
        z, scores = make_stein_points(trained, moons.features, moons.labels, "raw")
        logp = scores[:, -2:]
        assert np.all(logp <= 0.0)
        lse = np.log(np.exp(logp).sum(axis=1))
        assert np.all(np.abs(lse) <= 1e-9)

    def test_one_hot_block(self, trained, moons):
        z, _ = make_stein_points(trained, moons.features, moons.labels, "raw")
        onehot = z[:, -2:]
        assert np.all(onehot.sum(axis=1) == 1.0)
        assert np.all((onehot == 0.0) | (onehot == 1.0))

    def test_unknown_variant(self, trained):
        with pytest.raises(UnsupportedVariantError):
            make_stein_point(trained, np.zeros(2), 0, "middle")

    def test_last_layer_requires_hidden(self):
        flat = MLPClassifier([2, 2], [np.zeros((2, 2))], [np.zeros(2)])
        with pytest.raises(UnsupportedVariantError):
            make_stein_point(flat, np.zeros(2), 0, "last-layer")


class TestSteinKernel:
    def test_analytic_gaussian_probe_is_zero(self):
        # D=1 linear kernel with the standard normal score s(z) = -z:
        # trace 1, k*s_a*s_b = 4, grad_a k . s_b = -4, grad_b k . s_a = -1
        pa = SteinPoint(np.array([1.0]), np.array([-1.0]))
        pb = SteinPoint(np.array([2.0]), np.array([-2.0]))
        assert stein_kernel(LinearKernel(), pa, pb) == 0.0

    @pytest.mark.parametrize("name,kernel", ALL_KERNELS)
    def test_symmetry(self, name, kernel):
        rng = np.random.default_rng(17)
        for _ in range(50):
            pa = SteinPoint(rng.normal(0, 1, 4), rng.normal(0, 2, 4))
            pb = SteinPoint(rng.normal(0, 1, 4), rng.normal(0, 2, 4))
            assert abs(stein_kernel(kernel, pa, pb) - stein_kernel(kernel, pb, pa)) <= 1e-10

    @pytest.mark.parametrize("name", ["linear", "rbf", "imq"])
    def test_gram_is_symmetric_psd_on_trained_points(self, name, trained, moons):
        z, scores = make_stein_points(trained, moons.features[:50], moons.labels[:50], "raw")
        if name == "rbf":
            kernel = RBFKernel(median_heuristic_gamma(z))
        elif name == "imq":
            kernel = IMQKernel(1.0, -0.5)
        else:
            kernel = LinearKernel()
        gram = stein_gram(kernel, z, scores)
        assert np.abs(gram - gram.T).max() <= 1e-10
        eigenvalues = np.linalg.eigvalsh((gram + gram.T) / 2)
        assert eigenvalues.min() >= -1e-6 * eigenvalues.max()

    def test_profile_matches_scalar_path(self, trained, moons):
        z, scores = make_stein_points(trained, moons.features[:40], moons.labels[:40], "raw")
        rng = np.random.default_rng(3)
        for kernel_name, kernel in ALL_KERNELS:
            j = int(rng.integers(0, 40))
            profile = stein_kernel_profile(kernel, z, scores, z[j], scores[j])
            for i in range(40):
                direct = stein_kernel(kernel, SteinPoint(z[i], scores[i]), SteinPoint(z[j], scores[j]))
                assert abs(profile[i] - direct) <= 1e-10, kernel_name

    def test_dimension_mismatch(self):
        pa = SteinPoint(np.zeros(3), np.zeros(3))
        pb = SteinPoint(np.zeros(4), np.zeros(4))
        with pytest.raises(ValueError):
            stein_kernel(LinearKernel(), pa, pb)


def gaussian_points(rng, n, shift=0.0):
    x = rng.normal(0, 1, size=(n, 2)) + shift
    return [SteinPoint(x[i], -x[i]) for i in range(n)]


class TestKSDEstimators:
    def test_single_point_vstat(self):
        point = SteinPoint(np.array([0.5, 1.0]), np.array([-0.5, -1.0]))
        kernel = RBFKernel(0.5)
        estimate = ksd_vstat([point], kernel)
        assert estimate.value == stein_kernel(kernel, point, point)

    def test_ustat_needs_two_points(self):
        point = SteinPoint(np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError):
            ksd_ustat([point], RBFKernel(0.5))

    def test_empty_input(self):
        with pytest.raises(ValueError):
            ksd_vstat([], RBFKernel(0.5))

    def test_stein_identity_null(self):
        # samples from the scored distribution: U-statistic consistent with 0
        for kernel in (RBFKernel(0.5), IMQKernel(1.0, -0.5)):
            estimate = ksd_ustat(gaussian_points(np.random.default_rng(0), 1000), kernel)
            assert abs(estimate.value) <= 3 * estimate.std_error, type(kernel).__name__

    def test_shifted_distribution_detected(self):
        kernel = RBFKernel(0.5)
        null = ksd_ustat(gaussian_points(np.random.default_rng(0), 1000), kernel)
        shifted = ksd_ustat(gaussian_points(np.random.default_rng(1), 1000, shift=1.5), kernel)
        assert shifted.value > 3 * null.std_error

    def test_vstat_ustat_identity(self):
        # n^2 V = n(n-1) U + sum of diagonal terms, exactly
        rng = np.random.default_rng(7)
        for _ in range(10):
            n = int(rng.integers(2, 30))
            points = [SteinPoint(rng.normal(0, 1, 3), rng.normal(0, 1, 3)) for _ in range(n)]
            kernel = IMQKernel(1.0, -0.5)
            v = ksd_vstat(points, kernel).value
            u = ksd_ustat(points, kernel).value
            diag = sum(stein_kernel(kernel, p, p) for p in points)
            rhs = (n - 1) / n * u + diag / n**2
            assert abs(v - rhs) <= 1e-10 * max(1.0, abs(v))


class TestBandwidthRules:
    def test_two_points_at_distance_two(self):
        z = np.array([[0.0, 0.0], [2.0, 0.0]])
        assert median_heuristic_gamma(z) == 1.0 / 8.0

    def test_identical_points_fallback(self):
        z = np.zeros((5, 2))
        assert median_heuristic_gamma(z) == 1.0

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(2)
        z = rng.normal(0, 1, size=(40, 3))
        base = median_heuristic_gamma(z)
        for c in (0.5, 2.0, 10.0):
            assert abs(median_heuristic_gamma(c * z) - base / c**2) <= 1e-12 * base / c**2 + 1e-15

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            median_heuristic_gamma(np.zeros((1, 2)))

    def test_subsample_deterministic(self):
        rng = np.random.default_rng(4)
        z = rng.normal(0, 1, size=(1500, 2))
        assert median_heuristic_gamma(z) == median_heuristic_gamma(z)

    def test_local_scale_resolves_neighbors(self):
        rng = np.random.default_rng(6)
        z = rng.normal(0, 1, size=(200, 2))
        assert local_scale_gamma(z) > median_heuristic_gamma(z)

    def test_local_scale_identical_points_fallback(self):
        assert local_scale_gamma(np.zeros((4, 2))) == 1.0


class TestScoreCache:
    def test_round_trip(self, trained, moons, tmp_path):
        z, scores = make_stein_points(trained, moons.features, moons.labels, "raw")
        cache = ScoreCache(trained.fingerprint(), "raw", z, scores, moons.labels)
        path = tmp_path / "cache.bin"
        save_cache(cache, path)
        back = load_cache(path)
        assert back.model_fingerprint == cache.model_fingerprint
        assert back.variant == "raw"
        assert np.array_equal(back.z, cache.z)
        assert np.array_equal(back.scores, cache.scores)
        assert np.array_equal(back.labels, cache.labels)

    def test_byte_layout(self, tmp_path):
        z = np.array([[1.0, 2.0], [3.0, 4.0]])
        scores = np.array([[-1.0, 0.5], [0.25, -0.125]])
        labels = np.array([0, 1])
        cache = ScoreCache(0xDEADBEEF, "last-layer", z, scores, labels)
        data = cache.serialize()
        assert data[:4] == b"HDXC"
        version, variant, fingerprint, n, dim = struct.unpack("<IBQQQ", data[4:33])
        assert version == 1 and variant == 1 and fingerprint == 0xDEADBEEF
        assert n == 2 and dim == 2
        record0 = struct.unpack("<4dI", data[33:33 + 36])
        assert record0 == (1.0, 2.0, -1.0, 0.5, 0)

    def test_corrupted_magic(self, tmp_path):
        cache = ScoreCache(1, "raw", np.zeros((1, 2)), np.zeros((1, 2)), np.zeros(1, dtype=int))
        data = bytearray(cache.serialize())
        data[1] = 0x00
        with pytest.raises(ModelFormatError, match="magic"):
            ScoreCache.deserialize(bytes(data))

    def test_truncated(self):
        cache = ScoreCache(1, "raw", np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2, dtype=int))
        with pytest.raises(ModelFormatError):
            ScoreCache.deserialize(cache.serialize()[:-8])
