use pcsr_core::cloud::dist;
use pcsr_core::metrics::{chamfer, chamfer_with, hausdorff, similarity, ChamferVariant};
use pcsr_core::PointCloud;
use proptest::prelude::*;

fn brute_directional(a: &PointCloud, b: &PointCloud) -> (f64, f64) {
    let d: Vec<f64> = a
        .points()
        .iter()
        .map(|p| b.points().iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
        .collect();
    (
        d.iter().sum::<f64>() / d.len() as f64,
        d.iter().copied().fold(0.0, f64::max),
    )
}

fn cloud_strategy(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 1..max).prop_map(|v| PointCloud::new(v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn kd_metrics_equal_brute_force(a in cloud_strategy(600), b in cloud_strategy(600)) {
        let (ab_mean, ab_max) = brute_directional(&a, &b);
        let (ba_mean, ba_max) = brute_directional(&b, &a);
        let r = similarity(&a, &b, ChamferVariant::Mean).unwrap();
        prop_assert_eq!(r.chamfer_mm, (ab_mean + ba_mean) * 1e3 / 2.0);
        prop_assert_eq!(r.hausdorff_mm, ab_max.max(ba_max) * 1e3);
        prop_assert_eq!(chamfer_with(&a, &b, ChamferVariant::Sum).unwrap(), (ab_mean + ba_mean) * 1e3);
        prop_assert!(r.hausdorff_mm >= ab_mean * 1e3 && r.hausdorff_mm >= ba_mean * 1e3);
        prop_assert!(r.hausdorff_mm >= r.chamfer_mm);
    }

    #[test]
    fn symmetric_and_translation_invariant(a in cloud_strategy(300), b in cloud_strategy(300), t in prop::array::uniform3(-10.0f64..10.0)) {
        prop_assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());
        let cab = chamfer(&a, &b).unwrap();
        prop_assert!((cab - chamfer(&b, &a).unwrap()).abs() <= 1e-9 * (1.0 + cab));
        let shift = |c: &PointCloud| PointCloud::new(c.points().iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect()).unwrap();
        let (sa, sb) = (shift(&a), shift(&b));
        prop_assert!((chamfer(&sa, &sb).unwrap() - cab).abs() < 1e-6);
        prop_assert!((hausdorff(&sa, &sb).unwrap() - hausdorff(&a, &b).unwrap()).abs() < 1e-6);
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }
}

#[test]
fn five_thousand_point_clouds_match_exactly() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut gen = |n: usize| PointCloud::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap();
    let (a, b) = (gen(5000), gen(4000));
    let (ab, abm) = brute_directional(&a, &b);
    let (ba, bam) = brute_directional(&b, &a);
    assert_eq!(chamfer(&a, &b).unwrap(), (ab + ba) * 1e3 / 2.0);
    assert_eq!(hausdorff(&a, &b).unwrap(), abm.max(bam) * 1e3);
}
