use crowdpatrol::pedestrian::PedestrianState;
use crowdpatrol::rng::SimRng;
use crowdpatrol::sensing::{
    observe, ransac_range, simulate_range_scan, synth_detection, visible_pedestrians, CameraRig, Feature, RangeReturn,
    RangeScan, SensingParams,
};
use crowdpatrol::{Pose, Vec2};
use proptest::prelude::*;

fn scan_of(depths: &[f64]) -> RangeScan {
    RangeScan {
        points: depths
            .iter()
            .map(|&depth| RangeReturn { bearing: 0.0, depth })
            .collect(),
    }
}

/// Independent consensus search: best count over every hypothesis, then the
/// mean of the first hypothesis reaching it.
fn ransac_oracle(depths: &[f64], band: f64) -> (f64, usize) {
    let consensus = |h: f64| -> Vec<f64> { depths.iter().copied().filter(|d| (d - h).abs() <= band).collect() };
    let best = depths.iter().map(|&h| consensus(h).len()).max().unwrap();
    let h = depths.iter().copied().find(|&h| consensus(h).len() == best).unwrap();
    let inl = consensus(h);
    (inl.iter().sum::<f64>() / inl.len() as f64, best)
}

#[test]
fn ransac_matches_exhaustive_oracle_on_contaminated_scan() {
    let mut rng = SimRng::new(11);
    let mut depths = vec![5.0; 15];
    depths.extend((0..5).map(|_| rng.uniform_range(0.0, 10.0)));
    let est = ransac_range(&scan_of(&depths), 0.2).unwrap();
    let (range, inliers) = ransac_oracle(&depths, 0.2);
    assert!(est.inliers >= 15);
    assert_eq!(est.inliers, inliers);
    assert!((est.range - range).abs() < 1e-12);
    assert!((est.range - 5.0).abs() < 0.2);
}

#[test]
fn ransac_matches_oracle_on_random_scans() {
    let mut rng = SimRng::new(12);
    for _ in 0..500 {
        let k = 1 + (rng.next_u64() % 30) as usize;
        let depths: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.1, 10.0)).collect();
        let est = ransac_range(&scan_of(&depths), 0.2).unwrap();
        let (range, inliers) = ransac_oracle(&depths, 0.2);
        assert_eq!(est.inliers, inliers);
        assert!((est.range - range).abs() < 1e-12);
    }
}

#[test]
fn ransac_breakdown_at_forty_percent_outliers() {
    let rig = CameraRig::default();
    let params = SensingParams {
        outlier_rate: 0.4,
        returns_per_box: 20,
        ..SensingParams::default()
    };
    let robot = Pose::new(Vec2::ZERO, 0.0);
    let mut rng = SimRng::new(13);
    let trials = 10_000;
    let mut good = 0;
    for i in 0..trials {
        let range = 1.0 + 8.0 * (i as f64 / trials as f64);
        let p = PedestrianState::new(1, Vec2::polar(range, 0.3));
        let scan = simulate_range_scan(&p, &[p], &robot, &rig, &params, &mut rng);
        let est = ransac_range(&scan, params.inlier_band).unwrap();
        if (est.range - range).abs() <= 2.0 * params.inlier_band {
            good += 1;
        }
    }
    assert!(good as f64 >= 0.99 * trials as f64, "{good}/{trials}");
}

#[test]
fn repeated_features_stay_close() {
    let rig = CameraRig::default();
    let params = SensingParams {
        p_miss: 0.0,
        ..SensingParams::default()
    };
    let robot = Pose::new(Vec2::ZERO, 0.0);
    let p = PedestrianState::new(4, Vec2::new(3.0, 0.5));
    let mut rng = SimRng::new(14);
    let identity = Feature::random(params.feature_dim, &mut rng);
    let draws = 10_000;
    let mut total = 0.0;
    for _ in 0..draws {
        let a = synth_detection(&p, 0, &identity, &robot, &rig, &params, &mut rng).unwrap();
        let b = synth_detection(&p, 0, &identity, &robot, &rig, &params, &mut rng).unwrap();
        let dot: f64 = a
            .feature
            .as_slice()
            .iter()
            .zip(b.feature.as_slice())
            .map(|(x, y)| x * y)
            .sum();
        total += 1.0 - dot;
    }
    let mean = total / draws as f64;
    assert!(mean < 0.02, "{mean}");
}

fn layout() -> impl Strategy<Value = (f64, Vec<(f64, f64)>)> {
    (-3.2f64..3.2, prop::collection::vec((-8.0f64..8.0, -8.0f64..8.0), 1..12))
}

/// Pedestrians from `xs`, skipping any that would overlap the robot or an
/// earlier body.
fn peds(xs: &[(f64, f64)]) -> Vec<PedestrianState> {
    let mut out: Vec<PedestrianState> = Vec::new();
    for (i, &(x, y)) in xs.iter().enumerate() {
        let p = PedestrianState::new(i as u32, Vec2::new(x, y));
        if x.hypot(y) > 0.7 && out.iter().all(|o| !o.discs_overlap(&p)) {
            out.push(p);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn noiseless_fused_range_is_exact((heading, xs) in layout()) {
        let world = peds(&xs);
        let rig = CameraRig::default();
        let params = SensingParams::noiseless();
        let robot = Pose::new(Vec2::ZERO, heading);
        let mut rng = SimRng::new(1);
        let ids: Vec<Feature> = world.iter().map(|_| Feature::random(params.feature_dim, &mut rng)).collect();
        let dets = observe(&robot, &world, &ids, &rig, &params, &mut rng);
        let visible = visible_pedestrians(&robot, &world, &rig, params.occlusion_clearance);
        prop_assert_eq!(dets.len(), visible.len());
        for d in &dets {
            let truth = world.iter().find(|p| p.id == d.truth_id).unwrap();
            let fused = d.fused_range(&params);
            prop_assert!((fused - truth.position.norm()).abs() < 1e-9);
            prop_assert!((d.visual_range - truth.position.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn removing_a_pedestrian_never_hides_another((heading, xs) in layout(), drop in 0usize..12) {
        let world = peds(&xs);
        prop_assume!(!world.is_empty());
        let rig = CameraRig::default();
        let robot = Pose::new(Vec2::ZERO, heading);
        let before: Vec<u32> = visible_pedestrians(&robot, &world, &rig, 0.3).iter().map(|(p, _)| p.id).collect();
        let removed = world[drop % world.len()].id;
        let reduced: Vec<PedestrianState> = world.iter().copied().filter(|p| p.id != removed).collect();
        let after: Vec<u32> = visible_pedestrians(&robot, &reduced, &rig, 0.3).iter().map(|(p, _)| p.id).collect();
        for id in before.into_iter().filter(|&id| id != removed) {
            prop_assert!(after.contains(&id));
        }
    }
}
