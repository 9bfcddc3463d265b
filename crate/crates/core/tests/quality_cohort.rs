use segbench::phantom::{generate_cohort, CohortVariation, PhantomSpec};
use segbench::quality::{assess_quality, quality_distribution, QualityBand};
use segbench::{Dims, Spacing};

#[test]
fn cohort_band_counts_follow_tier_fractions() {
    let base = PhantomSpec::centered(Dims::new(136, 120, 64), Spacing::isotropic(0.625));
    let cohort = generate_cohort(&base, 20, &CohortVariation::default(), 31).unwrap();
    let reports: Vec<_> = cohort
        .iter()
        .map(|m| assess_quality(&m.volume, &m.mask, 3).unwrap())
        .collect();
    for (m, q) in cohort.iter().zip(&reports) {
        assert_eq!(q.band, m.entry.tier);
    }
    let hist = quality_distribution(&reports).unwrap();
    assert_eq!(
        [QualityBand::High, QualityBand::Medium, QualityBand::Low].map(|b| hist.count(b)),
        [3, 14, 3]
    );
    let ids: Vec<_> = cohort.iter().map(|m| m.entry.id.clone()).collect();
    let again = generate_cohort(&base, 20, &CohortVariation::default(), 31).unwrap();
    assert_eq!(again.iter().map(|m| m.entry.id.clone()).collect::<Vec<_>>(), ids);
    assert_eq!(again[4].volume, cohort[4].volume);
}
