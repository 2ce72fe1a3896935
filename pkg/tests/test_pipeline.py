import numpy as np
import pytest

from conftest import fringe_stack
from qholo.core import ComplexObject, FrameStack, InterferometerModel, PhaseStepSchedule, wrap_phase
from qholo.errors import DomainError, ScheduleError, ShapeError, SubsetError
from qholo.forward import CameraSpec, ObjectSpec, interferometer_phase, make_object, simulate_stack
from qholo.pipeline import (
    FilterConfig,
    count_residues,
    filter_stack,
    gaussian_smooth,
    lowpass_filter,
    radial_frequency,
    reconstruct_hologram,
    subset_frames,
    subset_indices,
    subtract_background,
    unwrap_phase,
)

NOISELESS = CameraSpec(exposure=1.0, read_noise_sigma=0.0, shot_noise=False)
IDENTITY = FilterConfig.identity()


# --- background

def test_subtract_background_examples():
    out = subtract_background(np.array([[105.0, 95.0]]), np.array([[100.0, 100.0]]))
    assert out.tolist() == [[5.0, 0.0]]
    frame = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(subtract_background(frame, np.zeros((2, 3))), frame)
    with pytest.raises(ShapeError):
        subtract_background(frame, np.zeros((3, 2)))


# --- low-pass

def test_lowpass_full_band_keeps_band_limited_frame(rng):
    shape = (64, 80)
    spectrum = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    spectrum[radial_frequency(shape) > 0.45] = 0
    frame = np.fft.ifft2(spectrum).real + 5
    np.testing.assert_allclose(lowpass_filter(frame, 0.5), frame, atol=1e-9)


def test_lowpass_full_band_only_drops_corner_frequencies(rng):
    frame = rng.normal(size=(32, 32))
    spectrum = np.fft.fft2(frame)
    spectrum[radial_frequency(frame.shape) > 0.5] = 0
    np.testing.assert_allclose(lowpass_filter(frame, 0.5), np.fft.ifft2(spectrum).real, atol=1e-12)


def test_lowpass_constant_and_mean(rng):
    const = np.full((16, 24), 3.25)
    np.testing.assert_allclose(lowpass_filter(const, 0.05), const, rtol=1e-12)
    frame = rng.uniform(0, 10, size=(40, 40))
    assert lowpass_filter(frame, 0.1).mean() == pytest.approx(frame.mean(), rel=1e-9)


def test_lowpass_removes_sinusoid_above_cutoff():
    x = np.arange(100)
    frame = np.tile(np.sin(2 * np.pi * 0.3 * x), (20, 1))
    out = lowpass_filter(frame, 0.2)
    assert np.max(np.abs(out)) < 1e-6


def test_lowpass_cutoff_domain():
    for bad in (0.0, 0.6, -0.1):
        with pytest.raises(DomainError):
            lowpass_filter(np.ones((4, 4)), bad)


# --- gaussian

def test_gaussian_identity_constant_impulse(rng):
    frame = rng.normal(size=(16, 16))
    assert np.array_equal(gaussian_smooth(frame, 0), frame)
    np.testing.assert_allclose(gaussian_smooth(np.full((16, 16), 2.5), 1.7), 2.5, rtol=1e-12)
    impulse = np.zeros((41, 41))
    impulse[20, 20] = 1.0
    assert gaussian_smooth(impulse, 2.0)[20, 20] == pytest.approx(1 / (8 * np.pi), rel=0.01)


def test_gaussian_mean_preserved(rng):
    frame = rng.uniform(0, 100, size=(37, 53))
    assert gaussian_smooth(frame, 1.5).mean() == pytest.approx(frame.mean(), rel=1e-9)
    with pytest.raises(DomainError):
        gaussian_smooth(frame, -1)


def test_filter_config_validation():
    with pytest.raises(DomainError):
        FilterConfig(lowpass_cutoff=0.7)
    with pytest.raises(DomainError):
        FilterConfig(gaussian_sigma=-0.5)
    assert IDENTITY.lowpass_cutoff is None and IDENTITY.gaussian_sigma == 0


# --- subsetting

@pytest.mark.parametrize("m, indices", [(4, (0, 3, 6, 9)), (3, (0, 4, 8)), (6, (0, 2, 4, 6, 8, 10)),
                                        (12, tuple(range(12)))])
def test_subset_indices_and_phases(m, indices):
    frames = np.arange(12.0)[:, None, None] * np.ones((12, 2, 2))
    base = FrameStack(PhaseStepSchedule.canonical(12), frames, 1.0)
    assert subset_indices(12, m) == indices
    sub = subset_frames(base, m)
    assert sub.schedule.is_canonical and sub.m == m
    np.testing.assert_allclose(sub.schedule.steps, 2 * np.pi * np.arange(m) / m, atol=1e-15)
    assert sub.frames[:, 0, 0].tolist() == list(map(float, indices))


def test_subset_errors():
    base = FrameStack(PhaseStepSchedule.canonical(12), np.ones((12, 2, 2)), 1.0)
    with pytest.raises(SubsetError):
        subset_frames(base, 5)
    odd = FrameStack(PhaseStepSchedule(tuple(np.linspace(0, 5, 12))), np.ones((12, 2, 2)), 1.0)
    with pytest.raises(ScheduleError):
        subset_frames(odd, 4)


# --- unwrapping

def offset_error(recovered, truth):
    """Residual after removing the best global offset."""
    d = recovered - truth
    return d - np.mean(d)


def test_unwrap_constant():
    w = np.full((20, 30), 1.2)
    np.testing.assert_allclose(unwrap_phase(w), w)


def test_unwrap_ramp_exact():
    truth = np.tile(np.linspace(0, 6 * np.pi, 500), (40, 1))
    out = unwrap_phase(wrap_phase(truth))
    k = (out - truth) / (2 * np.pi)
    assert np.allclose(k, np.round(k[0, 0]), atol=1e-9)


def gaussian_bump(shape, peak, width):
    rows, cols = np.indices(shape, dtype=float)
    r2 = (rows - shape[0] / 2) ** 2 + (cols - shape[1] / 2) ** 2
    return peak * np.exp(-r2 / (2 * width**2))


def test_unwrap_gaussian_bump_exact_and_noisy(rng):
    truth = gaussian_bump((128, 128), 5 * np.pi, 25)
    out = unwrap_phase(wrap_phase(truth))
    assert np.max(np.abs(offset_error(out, truth))) < 1e-9
    noisy = unwrap_phase(wrap_phase(truth + rng.normal(0, 0.3, truth.shape)))
    assert np.sqrt(np.mean(offset_error(noisy, truth) ** 2)) < 0.5


def test_unwrap_masked_pixels_are_filled_on_a_2pi_branch():
    truth = np.tile(np.linspace(0, 4 * np.pi, 64), (64, 1))
    wrapped = wrap_phase(truth)
    mask = np.zeros(truth.shape, bool)
    mask[20:30, 20:30] = True
    out = unwrap_phase(wrapped, mask)
    k = (out - wrapped) / (2 * np.pi)
    np.testing.assert_allclose(k, np.round(k), atol=1e-9)
    assert np.max(np.abs(offset_error(out, truth))) < 1e-9


def test_count_residues():
    assert count_residues(wrap_phase(gaussian_bump((32, 32), 4 * np.pi, 8))) == 0
    rows, cols = np.indices((32, 32), dtype=float)
    vortex = np.arctan2(rows - 15.5, cols - 15.5)
    assert count_residues(vortex) >= 1


# --- hologram

def shape_pair(theta, t=1.0, m=4, shape=(32, 32), **kw):
    th = np.full(shape, theta)
    return fringe_stack(th, t, m, **kw), fringe_stack(np.zeros(shape), 1.0, m, **kw)


def test_self_reference_is_flat():
    stack = fringe_stack(np.random.default_rng(1).uniform(-3, 3, (24, 24)), 0.8, 6)
    res = reconstruct_hologram(stack, stack)
    np.testing.assert_allclose(res.absolute_phase, 0, atol=1e-12)
    np.testing.assert_allclose(res.transmission, 1, atol=1e-12)


def test_flux_scaled_object_stack():
    ref = fringe_stack(np.zeros((24, 24)), 0.9, 4, flux=1000.0)
    obj = ref.replace_frames(ref.frames * 0.81)
    res = reconstruct_hologram(obj, ref)
    np.testing.assert_allclose(res.transmission, 1, atol=1e-12)
    np.testing.assert_allclose(res.absolute_phase, 0, atol=1e-12)


def test_schedule_and_shape_mismatch():
    a = fringe_stack(np.zeros((8, 8)), 1, 4)
    with pytest.raises(ScheduleError):
        reconstruct_hologram(a, fringe_stack(np.zeros((8, 8)), 1, 3))
    with pytest.raises(ShapeError):
        reconstruct_hologram(a, fringe_stack(np.zeros((9, 8)), 1, 4))


def simulate_pair(obj, model, m):
    sched = PhaseStepSchedule.canonical(m)
    ref = ComplexObject.empty(obj.shape, obj.pixel_pitch)
    return (simulate_stack(obj, model, sched, NOISELESS, 1),
            simulate_stack(ref, model, sched, NOISELESS, 2))


def disk_object(n=96, t=0.94):
    spec = ObjectSpec(kind="phase_disk", width=n, height=n, supersample=1, base_transmission=t)
    return make_object(spec)


def bent_model(shape, **kw):
    return InterferometerModel(interferometer_phase(shape, (0.05, -0.08), 6.0), **kw)


def test_referencing_cancels_nu():
    obj = disk_object()
    flat = InterferometerModel.flat(obj.shape, visibility=0.5, mean_flux=100.0)
    a = reconstruct_hologram(*simulate_pair(obj, flat, 4), IDENTITY)
    b = reconstruct_hologram(*simulate_pair(obj, bent_model(obj.shape, visibility=0.5, mean_flux=100.0), 4),
                             IDENTITY)
    np.testing.assert_allclose(b.absolute_phase, a.absolute_phase, atol=1e-9)
    np.testing.assert_allclose(b.transmission, a.transmission, atol=1e-9)


def test_filtered_referencing_cancels_nu_for_uniform_object():
    # filtering mixes neighbouring pixels, so the cancellation is exact only where tau is constant
    shape = (64, 64)
    obj = ComplexObject(np.full(shape, 0.8), np.full(shape, 1.3))
    model = bent_model(shape, visibility=0.5, mean_flux=100.0)
    res = reconstruct_hologram(*simulate_pair(obj, model, 4), FilterConfig(),
                               background_region=np.zeros(shape, bool))
    wrapped = wrap_phase(res.absolute_phase - 1.3)
    assert np.max(np.abs(wrapped - wrapped[0, 0])) < 1e-9
    np.testing.assert_allclose(res.transmission, 0.8, atol=1e-9)


@pytest.mark.parametrize("visibility, flux", [(0.1, 5.0), (0.5, 2000.0), (1.0, 50.0)])
def test_transmission_cancels_visibility_and_flux(visibility, flux):
    obj = disk_object(t=0.94)
    model = InterferometerModel(interferometer_phase(obj.shape, (0.02, 0.03)), visibility=visibility,
                                mean_flux=flux)
    res = reconstruct_hologram(*simulate_pair(obj, model, 6), IDENTITY)
    np.testing.assert_allclose(res.transmission, obj.transmission, atol=1e-9)
    np.testing.assert_allclose(res.absolute_phase, obj.phase, atol=1e-9)


def test_filters_leave_uniform_object_phase_unchanged():
    shape = (64, 64)
    obj = ComplexObject(np.full(shape, 0.9), np.full(shape, 0.82 * np.pi))
    model = InterferometerModel.flat(shape, visibility=0.4, mean_flux=300.0)
    obj_stack, _ = simulate_pair(obj, model, 4)
    plain = reconstruct_hologram(obj_stack, obj_stack, IDENTITY).reconstruction_object
    smooth = reconstruct_hologram(obj_stack, obj_stack, FilterConfig()).reconstruction_object
    assert np.max(np.abs(smooth.wrapped_phase - plain.wrapped_phase)) < 1e-9
    np.testing.assert_allclose(smooth.modulation, plain.modulation, atol=1e-9)


def test_filter_stack_applies_background():
    stack = FrameStack(PhaseStepSchedule.canonical(3), np.full((3, 8, 8), 110.0), 1.0)
    out = filter_stack(stack, FilterConfig(background=np.full((8, 8), 100.0)))
    np.testing.assert_allclose(out.frames, 10.0, rtol=1e-12)
    assert out.filtered


def test_degenerate_reference_pixels_flagged():
    obj, ref = shape_pair(0.5, shape=(8, 8))
    frames = ref.frames.copy()
    frames[:, 2, 3] = 0.0
    res = reconstruct_hologram(obj, ref.replace_frames(frames), IDENTITY)
    assert res.flagged_mask[2, 3] and res.transmission[2, 3] == 0.0
    assert res.degenerate_count == 1
