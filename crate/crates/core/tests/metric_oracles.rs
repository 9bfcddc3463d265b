use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segbench::metrics::{
    confusion, dice_profile_z, evaluate_case, hausdorff_mm, iou, stsd_mm, HausdorffMode, SurfaceDistances,
};
use segbench::{Dims, Mask, Spacing};

fn blob_mask(rng: &mut ChaCha8Rng, dims: Dims, spacing: Spacing) -> Mask {
    let d = dims.as_array();
    let balls: Vec<([f64; 3], f64)> = (0..rng.gen_range(1..4))
        .map(|_| {
            let c = std::array::from_fn(|a| rng.gen_range(0.0..d[a] as f64));
            (c, rng.gen_range(1.5..6.0))
        })
        .collect();
    let m = Mask::from_fn(dims, spacing, |p| {
        let q = p.as_array();
        balls
            .iter()
            .any(|(c, r)| (0..3).map(|a| (q[a] as f64 - c[a]).powi(2)).sum::<f64>() <= r * r)
    })
    .unwrap();
    if m.is_empty() {
        Mask::from_voxels(dims, spacing, [dims.center()]).unwrap()
    } else {
        m
    }
}

fn brute_surface(m: &Mask) -> Vec<[usize; 3]> {
    let d = m.dims().as_array();
    let mut out = Vec::new();
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                if !m.get(x, y, z) {
                    continue;
                }
                let p = [x as i64, y as i64, z as i64];
                let exposed = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
                    .iter()
                    .any(|o: &[i64; 3]| {
                        let q = [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
                        if (0..3).any(|a| q[a] < 0 || q[a] >= d[a] as i64) {
                            return true;
                        }
                        !m.get(q[0] as usize, q[1] as usize, q[2] as usize)
                    });
                if exposed {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn nearest(from: &[[usize; 3]], to: &[[usize; 3]], s: Spacing) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|a| ((p[a] as f64 - q[a] as f64) * s[a]).powi(2))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

#[test]
fn distance_transform_matches_all_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..30 {
        let dims = Dims::new(rng.gen_range(4..=24), rng.gen_range(4..=24), rng.gen_range(2..=16));
        let spacing = Spacing::new(
            rng.gen_range(0.3..2.0),
            rng.gen_range(0.3..2.0),
            rng.gen_range(0.3..2.5),
        )
        .unwrap();
        let a = blob_mask(&mut rng, dims, spacing);
        let b = blob_mask(&mut rng, dims, spacing);
        let (sa, sb) = (brute_surface(&a), brute_surface(&b));
        let ab = nearest(&sa, &sb, spacing);
        let ba = nearest(&sb, &sa, spacing);
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        let hd = max(&ab).max(max(&ba));
        let stsd = (ab.iter().sum::<f64>() + ba.iter().sum::<f64>()) / (ab.len() + ba.len()) as f64;
        assert!((hausdorff_mm(&a, &b, HausdorffMode::Symmetric).unwrap() - hd).abs() < 1e-9);
        assert!((hausdorff_mm(&a, &b, HausdorffMode::Directed).unwrap() - max(&ba)).abs() < 1e-9);
        assert!((stsd_mm(&a, &b).unwrap() - stsd).abs() < 1e-9);
    }
}

#[test]
fn overlap_scores_match_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let dims = Dims::new(16, 12, 10);
        let a = blob_mask(&mut rng, dims, Spacing::default());
        let b = blob_mask(&mut rng, dims, Spacing::default());
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (&p, &t) in a.bits().iter().zip(b.bits()) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let c = confusion(&a, &b).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
        let m = evaluate_case(&a, &b).unwrap();
        assert_eq!(m.dice, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        assert_eq!(iou(&a, &b).unwrap(), tp as f64 / (tp + fp + fn_) as f64);
        assert_eq!(m.sensitivity, tp as f64 / (tp + fn_) as f64);
        assert_eq!(m.specificity, tn as f64 / (tn + fp) as f64);
    }
}

#[test]
fn symmetric_distances_are_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let dims = Dims::new(20, 20, 12);
    let s = Spacing::new(0.625, 0.625, 1.25).unwrap();
    let a = blob_mask(&mut rng, dims, s);
    let b = blob_mask(&mut rng, dims, s);
    let ab = SurfaceDistances::compute(&a, &b).unwrap();
    let ba = SurfaceDistances::compute(&b, &a).unwrap();
    assert_eq!(
        ab.hausdorff(HausdorffMode::Symmetric),
        ba.hausdorff(HausdorffMode::Symmetric)
    );
    assert!((ab.stsd() - ba.stsd()).abs() < 1e-12);
    assert_eq!(hausdorff_mm(&a, &a, HausdorffMode::Symmetric).unwrap(), 0.0);
}

#[test]
fn slice_profile_matches_per_slice_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = Dims::new(14, 14, 9);
    let a = blob_mask(&mut rng, dims, Spacing::default());
    let b = blob_mask(&mut rng, dims, Spacing::default());
    let profile = dice_profile_z(&a, &b).unwrap();
    assert_eq!(profile.len(), 9);
    for s in profile {
        let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
        for y in 0..14 {
            for x in 0..14 {
                let (p, t) = (a.get(x, y, s.z), b.get(x, y, s.z));
                inter += (p && t) as usize;
                na += p as usize;
                nb += t as usize;
            }
        }
        match s.dice {
            None => assert_eq!(na + nb, 0),
            Some(d) => assert_eq!(d, 2.0 * inter as f64 / (na + nb) as f64),
        }
    }
}
