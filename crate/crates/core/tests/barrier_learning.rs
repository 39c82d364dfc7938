//! End-to-end check that online training actually learns a usable barrier
//! from one scan: signs must agree with the ground-truth labels almost
//! everywhere, and the measured hit point must classify as unsafe.

use nmpc_lbf::lbf::{BarrierNet, TrainConfig, DEFAULT_LAYER_SIZES};
use nmpc_lbf::sensing::{build_dataset, simulate_scan, LidarConfig, SamplingConfig};
use nmpc_lbf::world::{BodySet, Obstacle, ObstacleMotion, Pose, Position2, RobotBody, WorldState};

/// One robot at the origin facing +x, one circular obstacle dead ahead whose
/// near surface sits exactly 1.5 m away on ray 0.
fn single_obstacle_fixture() -> (WorldState, BodySet, LidarConfig, SamplingConfig) {
    let bodies = BodySet {
        robots: vec![RobotBody {
            id: "r0".into(),
            radius: 0.105,
        }],
        obstacles: vec![Obstacle {
            id: "pillar".into(),
            radius: 0.5,
            motion: ObstacleMotion::Static {
                center: Position2::new(2.0, 0.0),
            },
        }],
    };
    let world = WorldState::at_time(0.0, vec![Pose::new(0.0, 0.0, 0.0)], &bodies.obstacles);
    (world, bodies, LidarConfig::default(), SamplingConfig::default())
}

#[test]
fn barrier_learns_single_obstacle_scan() {
    let (world, bodies, lidar, sampling) = single_obstacle_fixture();
    let scan = simulate_scan(0, &world, &bodies, &lidar);
    assert!((scan.distances[0] - 1.5).abs() < 1e-12);
    let data = build_dataset(&scan, &lidar, &sampling);

    // Mini-batch descent for the one-shot fit: a single scan gives the
    // sparse near-surface samples little weight in a full-batch gradient,
    // so 200 full-batch epochs underfit the dip at the obstacle. Small
    // shuffled batches give those samples dedicated steps.
    let mut net = BarrierNet::new(&DEFAULT_LAYER_SIZES, 6);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: Some(25),
        seed: 6,
        ..Default::default()
    };
    let report = net.train_incremental(&data, &cfg).unwrap();
    assert!(report.final_loss < report.initial_loss);

    let mut agree = 0usize;
    let mut counted = 0usize;
    for (p, &label) in data.inputs.iter().zip(&data.labels) {
        if label.abs() <= 0.05 {
            continue;
        }
        counted += 1;
        if net.forward(*p).signum() == label.signum() {
            agree += 1;
        }
    }
    let fraction = agree as f64 / counted as f64;
    eprintln!(
        "sign agreement {agree}/{counted} = {fraction:.4}, loss {:.4} -> {:.4}, h(hit) = {:.4}",
        report.initial_loss,
        report.final_loss,
        net.forward(Position2::new(1.5, 0.0))
    );
    assert!(
        fraction >= 0.95,
        "sign agreement {fraction:.4} below 0.95 ({agree}/{counted})"
    );

    // The sensed surface point itself must be recognized as unsafe.
    let h_hit = net.forward(Position2::new(1.5, 0.0));
    assert!(h_hit < 0.0, "h at the measured hit point is {h_hit}, not < 0");
}
