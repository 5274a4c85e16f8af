import numpy as np
import pytest

from acoustic_ssm.audio import Waveform
from acoustic_ssm.augment import (
    AugmentSpec,
    fade,
    pitch_shift,
    random_segment,
    random_view,
    sample_view_params,
    time_mask,
    time_shift,
    with_seed,
)

from conftest import peak_hz, sine


class TestPitchShift:
    def test_octave_up(self):
        out = pitch_shift(sine(440, 16000, 16000), 12)
        f, df = peak_hz(out)
        assert abs(f - 880) <= df

    @pytest.mark.parametrize("semitones", [-2, -0.5, 1.5, 2])
    def test_dominant_frequency_scaled(self, semitones):
        out = pitch_shift(sine(500, 8000, 8000), semitones)
        f, df = peak_hz(out)
        assert abs(f - 500 * 2 ** (semitones / 12)) <= df

    def test_zero_is_identity(self, rng):
        w = Waveform(rng.standard_normal(1000) * 0.1, 8000)
        np.testing.assert_allclose(pitch_shift(w, 0).samples, w.samples, atol=1e-4)

    def test_silence(self):
        assert np.all(pitch_shift(Waveform(np.zeros(500), 8000), 3).samples == 0)

    def test_length_and_rate(self, rng):
        w = Waveform(rng.standard_normal(777) * 0.1, 8000)
        out = pitch_shift(w, -1.3)
        assert len(out) == 777 and out.rate == 8000

    def test_rejects_large_shift(self):
        with pytest.raises(ValueError):
            pitch_shift(sine(100, 1000, 100), 13)


class TestFade:
    def test_first_sample_zero(self, rng):
        w = Waveform(rng.uniform(0.5, 1, 200), 100)
        assert fade(w, 0.1, 0).samples[0] == 0

    def test_identity(self, rng):
        w = Waveform(rng.standard_normal(200), 100)
        np.testing.assert_array_equal(fade(w, 0, 0).samples, w.samples)

    def test_ramp_on_constant(self):
        out = fade(Waveform(np.ones(1000), 100), 0.5, 0).samples
        assert out[0] == 0.0
        assert out[500] == 1.0
        np.testing.assert_allclose(out[:500], np.arange(500) / 500)

    def test_tail_mirrors_head(self):
        out = fade(Waveform(np.ones(1000), 100), 0.2, 0.2).samples
        np.testing.assert_allclose(out[::-1][:200], out[:200])

    def test_rejects_overlong(self):
        with pytest.raises(ValueError):
            fade(Waveform(np.ones(10), 10), 0.6, 0.6)


class TestTimeMask:
    def test_identity(self, rng):
        w = Waveform(rng.standard_normal(100), 10)
        np.testing.assert_array_equal(time_mask(w, 0, 3).samples, w.samples)

    def test_exact_contiguous_span(self):
        out = time_mask(Waveform(np.ones(1000), 100), 0.1, seed=4).samples
        zeros = np.flatnonzero(out == 0)
        assert zeros.size == 100
        assert np.all(np.diff(zeros) == 1)

    def test_deterministic(self, rng):
        w = Waveform(rng.standard_normal(500), 10)
        np.testing.assert_array_equal(time_mask(w, 0.2, 9).samples, time_mask(w, 0.2, 9).samples)

    def test_hundred_random_inputs(self):
        r = np.random.default_rng(0)
        for i in range(100):
            n = int(r.integers(10, 500))
            x = r.uniform(0.1, 1.0, n)
            frac = float(r.uniform(0, 0.5))
            out = time_mask(Waveform(x, 100), frac, i).samples
            zeroed = out == 0
            assert zeroed.sum() == round(frac * n)
            np.testing.assert_array_equal(out[~zeroed], x[~zeroed])


class TestTimeShift:
    def test_definition(self):
        out = time_shift(Waveform(np.array([1.0, 2, 3, 4]), 4), 0.25)
        np.testing.assert_array_equal(out.samples, [4, 1, 2, 3])

    def test_identity(self, rng):
        w = Waveform(rng.standard_normal(50), 10)
        np.testing.assert_array_equal(time_shift(w, 0).samples, w.samples)

    def test_energy_preserved_hundred_inputs(self):
        r = np.random.default_rng(1)
        for _ in range(100):
            x = r.standard_normal(int(r.integers(1, 400)))
            out = time_shift(Waveform(x, 10), float(r.uniform(-1, 1))).samples
            # a permutation: same multiset of samples, so the same energy
            np.testing.assert_array_equal(np.sort(out), np.sort(x))
            assert np.sum(out ** 2) == pytest.approx(np.sum(x ** 2), rel=1e-14)


class TestRandomView:
    def test_collapsed_is_identity(self, rng):
        w = Waveform(rng.standard_normal(2000) * 0.1, 4000)
        out = random_view(w, AugmentSpec.collapsed(seed=5))
        np.testing.assert_allclose(out.samples, w.samples, atol=1e-4)

    def test_deterministic(self, rng):
        w = Waveform(rng.standard_normal(2000) * 0.1, 4000)
        spec = AugmentSpec(seed=11)
        np.testing.assert_array_equal(random_view(w, spec).samples, random_view(w, spec).samples)

    def test_seeds_differ_in_mask_location(self):
        spec = AugmentSpec(mask_frac=(0.05, 0.1))
        a = sample_view_params(with_seed(spec, 1), 2000)
        b = sample_view_params(with_seed(spec, 2), 2000)
        assert (a["mask_start"], a["mask_len"]) != (b["mask_start"], b["mask_len"])

    def test_parameters_within_ranges(self):
        spec = AugmentSpec()
        for s in range(50):
            p = sample_view_params(with_seed(spec, s), 1000)
            assert -2 <= p["semitones"] <= 2
            assert -0.1 <= p["shift_frac"] <= 0.1
            assert 0 <= p["mask_frac"] <= 0.1
            assert 0 <= p["fade_in"] <= 0.1 and 0 <= p["fade_out"] <= 0.1

    def test_finite_and_length_preserving(self, rng):
        w = Waveform(rng.standard_normal(3000) * 0.3, 4000)
        for s in range(10):
            out = random_view(w, AugmentSpec(seed=s))
            assert len(out) == 3000 and out.rate == 4000
            assert np.all(np.isfinite(out.samples))

    def test_rejects_bad_ranges(self):
        with pytest.raises(ValueError):
            AugmentSpec(mask_frac=(0.2, 0.1))


class TestRandomSegment:
    def test_length(self, rng):
        w = Waveform(rng.standard_normal(100000) * 0.1, 20000)
        assert len(random_segment(w, 30225, 0)) == 30225

    def test_equal_length_identity(self, rng):
        w = Waveform(rng.standard_normal(500), 100)
        np.testing.assert_array_equal(random_segment(w, 500, 3).samples, w.samples)

    def test_seeded_offset(self, rng):
        w = Waveform(rng.standard_normal(5000), 100)
        a, b = random_segment(w, 100, 8), random_segment(w, 100, 8)
        np.testing.assert_array_equal(a.samples, b.samples)
        # the crop is contiguous: it appears verbatim in the source
        start = int(np.flatnonzero(w.samples == a.samples[0])[0])
        np.testing.assert_array_equal(w.samples[start:start + 100], a.samples)

    def test_short_input_padded(self, rng):
        w = Waveform(rng.uniform(0.1, 1, 50), 100)
        out = random_segment(w, 80, 0)
        assert len(out) == 80
        assert np.count_nonzero(out.samples) == 50
