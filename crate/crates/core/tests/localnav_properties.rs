use crowdpatrol::localnav::{
    goal_reached, integrate, policy_by_name, world_to_scan, Policy, PolicyInput, ReactiveParams, ReactiveVo,
    RobotParams, Scan2D, VelocityCommand, POLICY_NAMES,
};
use crowdpatrol::pedestrian::PedestrianState;
use crowdpatrol::planner::{Cell, OccupancyGrid};
use crowdpatrol::rng::SimRng;
use crowdpatrol::{Pose, Vec2};
use proptest::prelude::*;

/// Entry distance of a ray into an axis-aligned box, slab method.
fn ray_box(o: Vec2, d: Vec2, lo: Vec2, hi: Vec2) -> Option<f64> {
    let mut t0: f64 = 0.0;
    let mut t1 = f64::INFINITY;
    for (o, d, lo, hi) in [(o.x, d.x, lo.x, hi.x), (o.y, d.y, lo.y, hi.y)] {
        if d.abs() < 1e-15 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let (a, b) = ((lo - o) / d, (hi - o) / d);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1).then_some(t0)
}

/// Distance at which a ray leaves the box it starts in.
fn ray_exit(o: Vec2, d: Vec2, lo: Vec2, hi: Vec2) -> f64 {
    let mut t = f64::INFINITY;
    for (o, d, lo, hi) in [(o.x, d.x, lo.x, hi.x), (o.y, d.y, lo.y, hi.y)] {
        if d > 0.0 {
            t = t.min((hi - o) / d);
        } else if d < 0.0 {
            t = t.min((lo - o) / d);
        }
    }
    t
}

fn ray_circle(o: Vec2, d: Vec2, c: Vec2, r: f64) -> Option<f64> {
    // |o + t d - c|² = r²
    let f = o - c;
    let b = f.dot(d);
    let cc = f.dot(f) - r * r;
    if cc <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

fn oracle_range(grid: &OccupancyGrid, peds: &[PedestrianState], o: Vec2, d: Vec2, max_range: f64) -> f64 {
    let lo = grid.origin;
    let hi = grid.origin + Vec2::new(grid.width as f64, grid.height as f64) * grid.resolution;
    let mut best = ray_exit(o, d, lo, hi);
    for j in 0..grid.height {
        for i in 0..grid.width {
            if grid.get(i as i64, j as i64) == Cell::Occupied {
                let a = grid.origin + Vec2::new(i as f64, j as f64) * grid.resolution;
                let b = a + Vec2::new(grid.resolution, grid.resolution);
                if let Some(t) = ray_box(o, d, a, b) {
                    best = best.min(t);
                }
            }
        }
    }
    for p in peds {
        if let Some(t) = ray_circle(o, d, p.position, p.radius()) {
            best = best.min(t);
        }
    }
    best.min(max_range)
}

fn random_world(rng: &mut SimRng) -> (OccupancyGrid, Vec<PedestrianState>, Pose) {
    let mut grid = OccupancyGrid::new(60, 50, 0.1, Vec2::new(-3.0, -2.5), Cell::Free).unwrap();
    for _ in 0..6 {
        let (i0, j0) = ((rng.next_u64() % 60) as usize, (rng.next_u64() % 50) as usize);
        let (w, h) = (1 + (rng.next_u64() % 8) as usize, 1 + (rng.next_u64() % 8) as usize);
        for j in j0..(j0 + h).min(50) {
            for i in i0..(i0 + w).min(60) {
                grid.set(i, j, Cell::Occupied);
            }
        }
    }
    let peds = (0..4)
        .map(|k| {
            PedestrianState::new(k, Vec2::new(rng.uniform_range(-3.0, 3.0), rng.uniform_range(-2.5, 2.5)))
                .with_shoulders(rng.uniform_range(0.3, 0.6), 0.3)
        })
        .collect::<Vec<_>>();
    let pose = loop {
        let p = Vec2::new(rng.uniform_range(-2.9, 2.9), rng.uniform_range(-2.4, 2.4));
        if grid.is_free_at(p) && peds.iter().all(|q| q.position.distance(p) > q.radius()) {
            break Pose::new(p, rng.uniform_range(-3.1, 3.1));
        }
    };
    (grid, peds, pose)
}

#[test]
fn scan_agrees_with_ray_box_oracle() {
    let mut rng = SimRng::new(91);
    let mut hits = 0;
    for _ in 0..40 {
        let (grid, peds, pose) = random_world(&mut rng);
        let scan = world_to_scan(&pose, &grid, &peds, 90, 4.0);
        for (k, &r) in scan.ranges.iter().enumerate() {
            assert!(r > 0.0 && r <= scan.max_range);
            let d = Vec2::from_angle(pose.heading + scan.beam_angle(k));
            let truth = oracle_range(&grid, &peds, pose.position, d, 4.0);
            assert!(r <= truth + grid.resolution, "beam {k}: {r} vs {truth}");
            assert!(r >= truth - 1e-9, "beam {k}: {r} vs {truth}");
            hits += usize::from(truth < 4.0);
        }
    }
    assert!(hits > 1000);
}

#[test]
fn wall_two_meters_ahead() {
    let mut grid = OccupancyGrid::new(100, 100, 0.1, Vec2::new(-5.0, -5.0), Cell::Free).unwrap();
    let (i, _) = grid.cell_of(Vec2::new(2.05, 0.0));
    for j in 30..70 {
        grid.set(i as usize, j, Cell::Occupied);
    }
    let pose = Pose::new(Vec2::new(0.03, -0.02), 0.0);
    let scan = world_to_scan(&pose, &grid, &[], 360, 10.0);
    let truth = oracle_range(&grid, &[], pose.position, Vec2::new(1.0, 0.0), 10.0);
    assert!((truth - 1.97).abs() < 1e-9);
    assert!((scan.ranges[0] - truth).abs() <= grid.resolution);
}

fn scan_strategy() -> impl Strategy<Value = Scan2D> {
    prop::collection::vec(prop_oneof![Just(10.0), 0.05f64..10.0], 72).prop_map(|ranges| Scan2D {
        ranges,
        max_range: 10.0,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn commands_stay_within_limits(
        scan in scan_strategy(),
        gx in -8.0f64..8.0,
        gy in -8.0f64..8.0,
    ) {
        let robot = RobotParams::default();
        for name in POLICY_NAMES {
            let policy = policy_by_name(name, robot, ReactiveParams::default()).unwrap();
            let out = policy.step(&PolicyInput {
                scan: scan.clone(),
                goal: Vec2::new(gx, gy),
                current_velocity: VelocityCommand::default(),
            });
            prop_assert!(out.command.linear.abs() <= robot.v_max);
            prop_assert!(out.command.angular.abs() <= robot.omega_max);
            if out.blocked {
                prop_assert_eq!(out.command, VelocityCommand::default());
            }
        }
    }

    #[test]
    fn forward_motion_is_admissible(scan in scan_strategy(), gx in -8.0f64..8.0, gy in -8.0f64..8.0) {
        let policy = ReactiveVo::default();
        let out = policy.step(&PolicyInput {
            scan: scan.clone(),
            goal: Vec2::new(gx, gy),
            current_velocity: VelocityCommand::default(),
        });
        let region = policy.region(&scan);
        prop_assert!(out.command.linear == 0.0 || !region.contains(Vec2::new(out.command.linear, 0.0)));
    }

    #[test]
    fn free_space_progress_is_monotone(
        gx in -6.0f64..6.0,
        gy in -6.0f64..6.0,
        heading in -3.1f64..3.1,
    ) {
        let robot = RobotParams::default();
        let goal = Vec2::new(gx, gy);
        prop_assume!(!goal_reached(&Pose::default(), goal, robot.goal_tolerance));
        let grid = OccupancyGrid::new(300, 300, 0.1, Vec2::new(-15.0, -15.0), Cell::Free).unwrap();
        let policy = ReactiveVo::new(robot, ReactiveParams::default());
        let mut pose = Pose::new(Vec2::ZERO, heading);
        let mut dist = pose.position.distance(goal);
        let mut ticks = 0;
        while !goal_reached(&pose, goal, robot.goal_tolerance) {
            let scan = world_to_scan(&pose, &grid, &[], 72, robot.max_range);
            let out = policy.step(&PolicyInput { scan, goal: pose.to_local(goal), current_velocity: VelocityCommand::default() });
            prop_assert!(!out.blocked);
            pose = integrate(&pose, out.command, 0.1);
            let d = pose.position.distance(goal);
            prop_assert!(d < dist, "tick {}: {} -> {}", ticks, dist, d);
            dist = d;
            ticks += 1;
            prop_assert!(ticks < 2000);
        }
    }
}
