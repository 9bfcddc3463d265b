use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segbench::metrics::dice;
use segbench::phantom::{generate, generate_mask, PhantomSpec};
use segbench::pipeline::{
    crop_mask, localize_oracle, localizers, offset_sweep, patch_size_sweep, run_pipeline, segmenters, uncrop,
    CaseInput, RoiBox, DEFAULT_ROI,
};
use segbench::{Dims, Spacing, VoxelIndex};

fn jittered(rng: &mut ChaCha8Rng, dims: Dims) -> PhantomSpec {
    let mut spec = PhantomSpec::centered(dims, Spacing::isotropic(0.625));
    spec.pv_tubes.clear();
    spec.mitral_plane = None;
    spec.body.semi_axes_mm = [
        rng.gen_range(6.0..12.0),
        rng.gen_range(5.0..10.0),
        rng.gen_range(4.0..8.0),
    ];
    for a in 0..3 {
        spec.body.center_mm[a] += rng.gen_range(-3.0..3.0);
    }
    spec.seed = rng.gen();
    spec
}

#[test]
fn in_bounds_crops_invert_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = Dims::new(64, 56, 40);
    for _ in 0..15 {
        let m = generate_mask(&jittered(&mut rng, dims)).unwrap();
        let c = localize_oracle(&m).unwrap();
        let (patch, roi) = crop_mask(&m, c, [44, 40, 30]).unwrap();
        assert!(roi.in_bounds(dims));
        assert_eq!(uncrop(&patch, &roi, dims).unwrap(), m);
    }
}

#[test]
fn default_roi_pads_short_scans_in_z() {
    let dims = Dims::new(300, 240, 88);
    let m = generate_mask(&PhantomSpec::centered(dims, Spacing::isotropic(0.625))).unwrap();
    let (patch, roi) = crop_mask(&m, localize_oracle(&m).unwrap(), DEFAULT_ROI).unwrap();
    assert_eq!(patch.dims().as_array(), [240, 160, 96]);
    assert_eq!(roi.padding(dims)[2], (4, 4));
    assert_eq!(uncrop(&patch, &roi, dims).unwrap(), m);
}

#[test]
fn oracle_pipeline_hits_the_in_box_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dims = Dims::new(64, 64, 40);
    let seg = segmenters().build_str("oracle", &()).unwrap();
    let locs = localizers();
    for _ in 0..12 {
        let (v, m) = generate(&jittered(&mut rng, dims)).unwrap();
        let (x, y, z) = (rng.gen_range(0..64), rng.gen_range(0..64), rng.gen_range(0..40));
        let loc = locs.build_str(&format!("fixed-center:x={x},y={y},z={z}"), &()).unwrap();
        let case = CaseInput::new("p", &v).with_truth(&m);
        let size = [rng.gen_range(4..40), rng.gen_range(4..40), rng.gen_range(4..30)];
        let run = run_pipeline(&case, loc.as_ref(), seg.as_ref(), size).unwrap();
        let roi = RoiBox::place(VoxelIndex::new(x, y, z), size, dims).unwrap();
        let k = m.foreground().filter(|p| roi.contains(*p)).count() as f64;
        assert_eq!(dice(&run.mask, &m).unwrap(), 2.0 * k / (m.count() as f64 + k));
    }
}

#[test]
fn offset_curve_falls_after_full_offset() {
    let dims = Dims::new(96, 64, 40);
    let mut spec = PhantomSpec::centered(dims, Spacing::isotropic(0.625));
    spec.pv_tubes.clear();
    spec.mitral_plane = None;
    spec.body.semi_axes_mm = [9.0, 7.0, 6.0];
    let (v, m) = generate(&spec).unwrap();
    let seg = segmenters().build_str("oracle", &()).unwrap();
    let offsets: Vec<f64> = (0..=12).map(|i| i as f64 * 25.0).collect();
    let curve = offset_sweep(&v, &m, seg.as_ref(), [48, 40, 32], &offsets, 0).unwrap();
    for p in curve.iter().filter(|p| p.offset_pct <= 100.0) {
        assert_eq!(p.dice, 1.0);
    }
    assert!(curve.last().unwrap().dice < 1.0);
    for w in curve.windows(2) {
        assert!(w[1].dice <= w[0].dice);
    }
}

#[test]
fn whole_scan_box_background_share() {
    let dims = Dims::new(640, 640, 88);
    let m = generate_mask(&PhantomSpec::centered(dims, Spacing::isotropic(0.625))).unwrap();
    let pts = patch_size_sweep(&m, &[(640, 640), (400, 400), (320, 240), (240, 160)], 88).unwrap();
    assert_eq!(pts[0].containment_pct, 100.0);
    assert_eq!(pts[0].background_pct, 100.0 * (1.0 - m.count() as f64 / 36_044_800.0));
    for w in pts.windows(2) {
        assert!(w[1].background_pct < w[0].background_pct);
        assert_eq!(w[1].containment_pct, 100.0);
    }
}
