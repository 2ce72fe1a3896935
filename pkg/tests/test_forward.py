import numpy as np
import pytest

from qholo.core import ComplexObject, InterferometerModel, PhaseStepSchedule, Rect
from qholo.errors import DomainError, RangeError, ResolutionError, ScheduleError
from qholo.forward import (
    DEFAULT_PITCH,
    USAF_FREQUENCIES,
    BarGroupSpec,
    CameraSpec,
    ObjectSpec,
    blur_object,
    height_for_phase,
    interferometer_phase,
    make_object,
    object_layout,
    od_factor,
    phase_from_height,
    simulate_background,
    simulate_stack,
)

NOISELESS = CameraSpec(exposure=1.0, read_noise_sigma=0.0, shot_noise=False)


# --- objects

def test_uniform_object():
    obj = make_object(ObjectSpec(kind="uniform", phase_step=0.82 * np.pi, base_transmission=0.9,
                                 width=64, height=48))
    assert obj.shape == (48, 64)
    assert np.all(obj.phase == 0.82 * np.pi)
    assert np.all(obj.transmission == 0.9)


def test_usaf_bar_width_at_6p3():
    g = BarGroupSpec.from_frequency(6.3, "vertical", Rect(0, 0, 10, 10), DEFAULT_PITCH)
    assert g.bar_width == pytest.approx(79.4e-6, abs=0.05e-6)
    assert g.frequency == pytest.approx(1 / g.line_pair_length, rel=1e-12)


def test_default_pitch_matches_field_of_view():
    assert DEFAULT_PITCH * 500 == pytest.approx(6.1e-3)


def test_od_whole_field_amplitude_convention():
    obj = make_object(ObjectSpec(kind="uniform", od=0.4, width=64, height=64))
    np.testing.assert_allclose(obj.transmission, 10 ** -0.2, rtol=1e-15)
    assert obj.transmission[0, 0] == pytest.approx(0.631, abs=5e-4)


def test_od_region_and_intensity_convention():
    region = Rect(10, 10, 20, 20)
    obj = make_object(ObjectSpec(kind="uniform", od=0.3, od_region=region,
                                 od_convention="intensity", width=64, height=64))
    assert obj.transmission[15, 15] == pytest.approx(10 ** -0.3)
    assert obj.transmission[0, 0] == 1.0
    assert od_factor(0.0) == 1.0
    with pytest.raises(DomainError):
        od_factor(-0.1)


def test_usaf_layout_has_table_groups_in_both_orientations():
    layout = object_layout(ObjectSpec())
    seen = {(round(g.frequency, 1), g.orientation) for g in layout.groups}
    assert seen == {(f, o) for f in USAF_FREQUENCIES for o in ("vertical", "horizontal")}
    shape = (500, 500)
    for g in layout.groups:
        assert g.position.within(shape)
        assert g.bar_width_px >= 2
    assert not layout.region_in.overlaps(layout.region_out)


def test_usaf_binary_phase_map():
    spec = ObjectSpec(supersample=1)
    obj = make_object(spec)
    assert set(np.unique(obj.phase)) == {0.0, spec.phase_step}
    layout = object_layout(spec)
    assert np.all(obj.phase[layout.region_in.slices] == spec.phase_step)
    assert np.all(obj.phase[layout.region_out.slices] == 0.0)


def test_supersampled_edges_hold_pixel_averaged_field():
    spec = ObjectSpec()
    obj = make_object(spec)
    cover = object_layout(spec).coverage(spec.shape, spec.supersample)
    edge = (cover > 0) & (cover < 1)
    expected = (1 - cover[edge]) + cover[edge] * np.exp(1j * spec.phase_step)
    np.testing.assert_allclose(obj.field[edge], expected, atol=1e-12)
    assert np.all(obj.phase[cover == 1] == spec.phase_step)


def test_usaf_period_matches_frequency():
    spec = ObjectSpec(supersample=1)
    obj = make_object(spec)
    for g in object_layout(spec).groups:
        p = g.position
        if g.orientation == "vertical":
            line = obj.phase[p.row + p.height // 2, p.col:p.col + p.width]
        else:
            line = obj.phase[p.row:p.row + p.height, p.col + p.width // 2]
        inside = line > spec.phase_step / 2
        starts = np.flatnonzero(inside[1:] & ~inside[:-1]) + 1
        if inside[0]:
            starts = np.r_[0, starts]
        assert len(starts) == 3, g.label
        assert abs(np.mean(np.diff(starts)) - g.period_px) <= 1.0, g.label


def test_usaf_too_coarse_pitch_names_group():
    with pytest.raises(ResolutionError, match="8.0 lp/mm"):
        make_object(ObjectSpec(pixel_pitch=35e-6, width=300, height=300))


@pytest.mark.parametrize("kind", ["phase_disk", "happy_face"])
def test_masks_keep_flat_regions_clear(kind):
    spec = ObjectSpec(kind=kind, width=200, height=200)
    obj = make_object(spec)
    layout = object_layout(spec)
    for r in layout.flat_regions:
        assert r.within(spec.shape)
        assert np.all(obj.phase[r.slices] == 0)
    assert np.all(obj.phase[layout.region_in.slices] == spec.phase_step)


def test_object_spec_validation():
    with pytest.raises(DomainError):
        ObjectSpec(kind="star")
    with pytest.raises(DomainError):
        ObjectSpec(od=-1)
    with pytest.raises(DomainError):
        ObjectSpec(base_transmission=1.5)
    with pytest.raises(DomainError):
        ObjectSpec(phase_step=np.inf)


# --- phase from height

def test_phase_from_height():
    assert phase_from_height(0.0) == 0.0
    h = height_for_phase(0.82 * np.pi)
    assert h == pytest.approx(0.82 * 730e-9 / (2 * 0.6))
    assert h == pytest.approx(498.9e-9, abs=0.1e-9)
    assert phase_from_height(h) == pytest.approx(0.82 * np.pi)
    assert phase_from_height(h, passes=2) == pytest.approx(2 * phase_from_height(h))
    with pytest.raises(DomainError):
        phase_from_height(1e-7, refractive_index=1.0)
    with pytest.raises(DomainError):
        phase_from_height(1e-7, wavelength=0)


# --- blur

def test_blur_identity_and_uniform():
    obj = make_object(ObjectSpec(kind="phase_disk", width=64, height=64))
    assert blur_object(obj, 0.0) is obj
    flat = ComplexObject(np.full((32, 32), 0.7), np.full((32, 32), 1.1))
    out = blur_object(flat, 30e-6)
    np.testing.assert_allclose(out.transmission, 0.7, atol=1e-12)
    np.testing.assert_allclose(out.phase, 1.1, atol=1e-12)
    with pytest.raises(DomainError):
        blur_object(flat, -1.0)


def grating(n, period, low, high):
    x = np.arange(n)
    return np.where((x // (period // 2)) % 2 == 0, high, low)


def fundamental(profile, period):
    spec = np.abs(np.fft.rfft(profile - profile.mean()))
    return spec[len(profile) // period]


@pytest.mark.parametrize("sigma_px, period", [(1.0, 16), (2.0, 32), (3.0, 40)])
def test_blur_amplitude_grating_mtf(sigma_px, period):
    n = period * 16
    t = np.tile(grating(n, period, 0.2, 1.0), (8, 1))
    obj = ComplexObject(t, np.zeros_like(t), pixel_pitch=1e-6)
    out = blur_object(obj, sigma_px * 1e-6)
    f = 1 / period
    ratio = fundamental(out.transmission[4], period) / fundamental(t[4], period)
    assert ratio == pytest.approx(np.exp(-2 * np.pi**2 * sigma_px**2 * f**2), rel=0.01)


def test_blur_small_phase_grating_mtf():
    period, sigma_px = 24, 2.0
    n = period * 16
    theta = np.tile(grating(n, period, 0.0, 0.05), (8, 1))
    obj = ComplexObject(np.ones_like(theta), theta, pixel_pitch=1e-6)
    out = blur_object(obj, sigma_px * 1e-6)
    ratio = fundamental(out.phase[4], period) / fundamental(theta[4], period)
    assert ratio == pytest.approx(np.exp(-2 * np.pi**2 * sigma_px**2 / period**2), rel=0.1)


# --- camera

def flat_model(shape, **kw):
    return InterferometerModel.flat(shape, **kw)


def test_zero_flux_gives_zero_frames():
    obj = ComplexObject.empty((8, 8))
    cam = CameraSpec(read_noise_sigma=0.0)
    stack = simulate_stack(obj, flat_model((8, 8), mean_flux=0.0), PhaseStepSchedule.canonical(4), cam)
    assert np.all(stack.frames == 0)


def test_exposure_linearity_noiseless():
    obj = make_object(ObjectSpec(kind="phase_disk", width=32, height=32))
    model = flat_model((32, 32), visibility=0.5, mean_flux=100.0)
    sched = PhaseStepSchedule.canonical(4)
    a = simulate_stack(obj, model, sched, CameraSpec(exposure=0.5, read_noise_sigma=0, shot_noise=False))
    b = simulate_stack(obj, model, sched, CameraSpec(exposure=1.0, read_noise_sigma=0, shot_noise=False))
    assert np.array_equal(b.frames, 2 * a.frames)


def test_poisson_statistics_oracle():
    shape = (100, 100)
    model = flat_model(shape, visibility=1.0, mean_flux=1000.0)
    cam = CameraSpec(exposure=0.5, read_noise_sigma=0.0, seed=7)
    frame = simulate_stack(ComplexObject.empty(shape), model, PhaseStepSchedule.canonical(4), cam).frames[0]
    mean = frame.mean()
    assert abs(mean - 1000) < 3 * np.sqrt(1000 / frame.size)
    assert 0.95 <= frame.var(ddof=1) / mean <= 1.05


def test_dispersion_over_repeated_seeds():
    shape = (10, 10)
    model = flat_model(shape, visibility=0.5, mean_flux=40.0)
    sched = PhaseStepSchedule.canonical(3)
    samples = np.stack([
        simulate_stack(ComplexObject.empty(shape), model, sched,
                       CameraSpec(exposure=1.0, read_noise_sigma=0.0, seed=s)).frames[0]
        for s in range(100)
    ])
    ratio = samples.var(axis=0, ddof=1).mean() / samples.mean()
    assert ratio == pytest.approx(1.0, abs=0.05)


def test_determinism_and_seed_sensitivity():
    obj = make_object(ObjectSpec(kind="happy_face", width=64, height=64))
    model = flat_model((64, 64), visibility=0.3)
    sched = PhaseStepSchedule.canonical(12)
    a = simulate_stack(obj, model, sched, CameraSpec(seed=5))
    b = simulate_stack(obj, model, sched, CameraSpec(seed=5))
    c = simulate_stack(obj, model, sched, CameraSpec(seed=6))
    assert np.array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, c.frames)
    # frames are digitized whole counts
    assert np.array_equal(a.frames, np.rint(a.frames))


def test_overflow_raises_range_error():
    with pytest.raises(RangeError):
        simulate_stack(ComplexObject.empty((4, 4)), flat_model((4, 4), mean_flux=1e6),
                       PhaseStepSchedule.canonical(3), CameraSpec(exposure=1.0))


def test_non_canonical_schedule_rejected():
    with pytest.raises(ScheduleError):
        simulate_stack(ComplexObject.empty((4, 4)), flat_model((4, 4)),
                       PhaseStepSchedule((0.0, 1.0, 2.0)), NOISELESS)


def test_background_frames():
    zero = simulate_background(CameraSpec(read_noise_sigma=0.0), (8, 8))
    assert np.all(zero == 0)
    cam = CameraSpec(exposure=1.0, dark_background=100.0, read_noise_sigma=0.0, seed=3)
    bg = simulate_background(cam, (100, 100))
    assert abs(bg.mean() - 100) < 3 * np.sqrt(100 / bg.size)
    assert np.array_equal(bg, simulate_background(cam, (100, 100)))


def test_camera_spec_validation():
    with pytest.raises(DomainError):
        CameraSpec(exposure=0)
    with pytest.raises(DomainError):
        CameraSpec(read_noise_sigma=-1)
    with pytest.raises(DomainError):
        CameraSpec(seed=2**64)
    assert NOISELESS.noiseless and not CameraSpec().noiseless


def test_interferometer_phase_map():
    nu = interferometer_phase((5, 7), tilt=(0.1, 0.2), curvature=3.0)
    assert nu.shape == (5, 7)
    assert nu[2, 3] == pytest.approx(0.0)
    assert nu[0, 0] == pytest.approx(3.0 - 0.1 * 2 - 0.2 * 3)
