import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fnoseg import tensor
from fnoseg.errors import DimensionError, ShapeMismatchError


def random_field(shape, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape).astype(dtype)


class TestFFT3:
    def test_constant_field_is_dc_only(self):
        f = np.full((2, 4, 4, 4), 0.0)
        f[0] = 2.5
        f[1] = -1.25
        spec = tensor.fft3(f)
        assert spec[0, 0, 0, 0] == pytest.approx(2.5, abs=1e-14)
        assert spec[1, 0, 0, 0] == pytest.approx(-1.25, abs=1e-14)
        spec[:, 0, 0, 0] = 0
        assert np.abs(spec).max() < 1e-14

    def test_unit_impulse_spreads_flat(self):
        n = 5
        f = np.zeros((1, n, n, n))
        f[0, 0, 0, 0] = 1.0
        spec = tensor.fft3(f)
        assert np.allclose(spec, 1.0 / n**3, atol=1e-15)

    def test_round_trip_nonpow2(self):
        f = random_field((3, 5, 6, 7), seed=1)
        g = tensor.ifft3(tensor.fft3(f), nz=7)
        assert np.abs(g - f).max() <= 1e-10 * np.abs(f).max()

    def test_dc_mode_is_channel_mean(self):
        f = random_field((2, 6, 5, 8), seed=2)
        spec = tensor.fft3(f)
        for c in range(2):
            assert spec[c, 0, 0, 0].real == pytest.approx(f[c].mean(), abs=1e-12)
            assert abs(spec[c, 0, 0, 0].imag) < 1e-15

    def test_small_axis_rejected(self):
        with pytest.raises(DimensionError):
            tensor.fft3(np.zeros((1, 1, 4, 4)))


class TestIFFT3:
    def test_dc_only_spectrum_gives_constant(self):
        spec = np.zeros((1, 4, 4, 3), dtype=complex)
        spec[0, 0, 0, 0] = 3.5
        f = tensor.ifft3(spec, nz=4)
        assert np.allclose(f, 3.5, atol=1e-13)

    def test_single_cosine_amplitude_preserved(self):
        # closed form: cos(2*pi*k.x/n) has two conjugate modes of amplitude 1/2
        n = 8
        f = tensor.sample_cosine((n, n, n), freq=(1, 0, 2), amplitude=1.7)[None]
        spec = tensor.fft3(f)
        expect = np.zeros_like(spec)
        # the conjugate partner (-1, 0, -2) lies in the implied z-mirror,
        # so the stored half holds a single mode of amplitude a/2
        expect[0, 1, 0, 2] = 1.7 / 2
        assert np.abs(spec - expect).max() < 1e-12
        back = tensor.ifft3(spec, nz=n)
        assert np.abs(back - f).max() < 1e-12

    def test_zero_spectrum_gives_zero(self):
        f = tensor.ifft3(np.zeros((2, 4, 4, 3), dtype=complex), nz=4)
        assert not f.any()

    def test_shape_mismatch_rejected(self):
        spec = np.zeros((1, 4, 4, 3), dtype=complex)
        with pytest.raises(ShapeMismatchError):
            tensor.ifft3(spec, nz=7)


class TestInvariants:
    @settings(max_examples=30, deadline=None)
    @given(
        nx=st.integers(2, 9),
        ny=st.integers(2, 9),
        nz=st.integers(2, 9),
        seed=st.integers(0, 2**31),
    )
    def test_round_trip_property(self, nx, ny, nz, seed):
        f = random_field((2, nx, ny, nz), seed=seed)
        g = tensor.ifft3(tensor.fft3(f), nz=nz)
        assert np.abs(g - f).max() <= 1e-10 * max(np.abs(f).max(), 1e-300)
        assert np.all(np.isfinite(g))

    def test_linearity(self):
        f = random_field((2, 5, 4, 6), seed=3)
        g = random_field((2, 5, 4, 6), seed=4)
        a, b = 1.37, -2.41
        lhs = tensor.fft3(a * f + b * g)
        rhs = a * tensor.fft3(f) + b * tensor.fft3(g)
        scale = np.abs(rhs).max()
        assert np.abs(lhs - rhs).max() <= 1e-12 * scale

    @pytest.mark.parametrize("shape", [(5, 6, 7), (15, 15, 10), (8, 8, 8), (4, 9, 5)])
    def test_parseval(self, shape):
        f = random_field((3,) + shape, seed=5)
        spec = tensor.fft3(f)
        n = int(np.prod(shape))
        w = tensor.parseval_weights(*shape)
        lhs = float((f**2).sum())
        rhs = float(n * (w * np.abs(spec) ** 2).sum())
        assert abs(lhs - rhs) <= 1e-10 * lhs

    def test_resolution_consistency_of_shared_modes(self):
        # one bandlimited function sampled at n^3 and (2n)^3: the shared
        # low-frequency modes must agree, which is what makes shared
        # spectral weights transferable across resolutions
        n = 8
        terms = [((1, 2, 0), 0.7, 0.3), ((3, 0, 2), -1.1, 1.0), ((2, 2, 3), 0.4, -0.5)]
        coarse = np.zeros((1, n, n, n))
        fine = np.zeros((1, 2 * n, 2 * n, 2 * n))
        for freq, amp, ph in terms:
            coarse[0] += tensor.sample_cosine((n, n, n), freq, amp, ph)
            fine[0] += tensor.sample_cosine((2 * n, 2 * n, 2 * n), freq, amp, ph)
        sc = tensor.fft3(coarse)
        sf = tensor.fft3(fine)
        for freq, _, _ in terms:
            fx, fy, fz = freq
            for ix, iy in [(fx, fy), ((-fx) % n, (-fy) % n)]:
                a = sc[0, ix, iy, fz]
                bx, by = ix if ix <= n // 2 else ix - n, iy if iy <= n // 2 else iy - n
                b = sf[0, bx % (2 * n), by % (2 * n), fz]
                assert abs(a - b) <= 1e-10

    def test_f32_supported(self):
        f = random_field((2, 6, 6, 6), seed=6, dtype=np.float32)
        spec = tensor.fft3(f)
        assert spec.dtype == np.complex64
        g = tensor.ifft3(spec, nz=6)
        assert g.dtype == np.float32
        assert np.abs(g - f).max() < 1e-5


class TestHelpers:
    def test_signed_freq(self):
        assert tensor.signed_freq(4).tolist() == [0, 1, 2, -1]
        assert tensor.signed_freq(5).tolist() == [0, 1, 2, -2, -1]

    def test_as_field_rejects_wrong_rank(self):
        with pytest.raises(ShapeMismatchError):
            tensor.as_field(np.zeros((4, 4, 4)))

    def test_parseval_weights_planes(self):
        w = tensor.parseval_weights(2, 2, 6)
        assert w[0, 0, 0] == 1.0 and w[0, 0, 3] == 1.0
        assert np.all(w[:, :, 1:3] == 2.0)
        w_odd = tensor.parseval_weights(2, 2, 5)
        assert w_odd[0, 0, 0] == 1.0 and np.all(w_odd[:, :, 1:] == 2.0)
