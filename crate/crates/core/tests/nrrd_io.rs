use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segbench::nrrd::{read_mask, read_nrrd, read_nrrd_as, write_mask, write_volume, Encoding, Grid, GridKind};
use segbench::phantom::{generate, PhantomSpec};
use segbench::{Dims, IntensityType, Mask, Spacing, Volume};

fn random_volume(rng: &mut ChaCha8Rng, kind: IntensityType) -> Volume {
    let dims = Dims::new(rng.gen_range(1..12), rng.gen_range(1..12), rng.gen_range(1..6));
    let spacing = Spacing::new(
        rng.gen_range(0.1..3.0),
        rng.gen_range(0.1..3.0),
        rng.gen_range(0.1..3.0),
    )
    .unwrap();
    let values: Vec<f64> = (0..dims.len())
        .map(|_| match kind {
            IntensityType::U8 => rng.gen_range(0..=255) as f64,
            IntensityType::U16 => rng.gen_range(0..=65535) as f64,
            IntensityType::F32 => rng.gen_range(-1e6f32..1e6) as f64,
        })
        .collect();
    Volume::new(dims, spacing, segbench::VolumeData::from_f64(kind, values)).unwrap()
}

#[test]
fn files_round_trip_for_every_type_and_encoding() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..24 {
        let kind = [IntensityType::U8, IntensityType::U16, IntensityType::F32][i % 3];
        let enc = if i % 2 == 0 { Encoding::Raw } else { Encoding::Gzip };
        let v = random_volume(&mut rng, kind);
        let path = dir.path().join(format!("v{i}.nrrd"));
        write_volume(&v, &path, enc).unwrap();
        let back = read_nrrd_as(&path, GridKind::Volume).unwrap();
        assert_eq!(back, Grid::Volume(v));
    }
}

#[test]
fn masks_are_detected_and_encodings_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = Dims::new(32, 32, 8);
    let m = Mask::new(
        dims,
        Spacing::isotropic(0.625),
        (0..dims.len()).map(|_| rng.gen_bool(0.3)).collect(),
    )
    .unwrap();
    let raw = dir.path().join("raw.nrrd");
    let gz = dir.path().join("gz.nrrd");
    write_mask(&m, &raw, Encoding::Raw).unwrap();
    write_mask(&m, &gz, Encoding::Gzip).unwrap();
    assert!(matches!(read_nrrd(&raw).unwrap(), Grid::Mask(_)));
    assert_eq!(read_mask(&raw).unwrap(), m);
    assert_eq!(read_mask(&gz).unwrap(), m);
    assert!(std::fs::metadata(&gz).unwrap().len() < std::fs::metadata(&raw).unwrap().len());
}

#[test]
fn default_phantom_headers_carry_scan_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let (v, m) = generate(&PhantomSpec::default()).unwrap();
    let vp = dir.path().join("scan.nrrd");
    let mp = dir.path().join("scan_label.nrrd");
    write_volume(&v, &vp, Encoding::Gzip).unwrap();
    write_mask(&m, &mp, Encoding::Gzip).unwrap();
    for p in [&vp, &mp] {
        let bytes = std::fs::read(p).unwrap();
        let end = bytes.windows(2).position(|w| w == b"\n\n").unwrap();
        let header = std::str::from_utf8(&bytes[..end]).unwrap();
        assert!(header.contains("sizes: 576 576 88"), "{header}");
        assert!(header.contains("spacings: 0.625 0.625 0.625"), "{header}");
    }
    assert_eq!(read_mask(&mp).unwrap(), m);
    assert_eq!(read_nrrd_as(&vp, GridKind::Volume).unwrap(), Grid::Volume(v));
}

#[test]
fn missing_file_reports_path() {
    let err = read_nrrd("/definitely/not/here.nrrd").unwrap_err();
    assert!(err.to_string().contains("here.nrrd"));
}
