use altruist_core::reward::{combine, individual_utility, svo_reward, SocialAggregation, UtilityScale, VehicleStepInfo};
use altruist_core::{SvoConfig, VehicleId};
use proptest::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

const SCALE: UtilityScale = UtilityScale {
    v_max: 30.0,
    distance_max: 50.0 / 3.0 * 0.6,
};

fn utilities(values: &[f64]) -> BTreeMap<VehicleId, f64> {
    values.iter().enumerate().map(|(i, v)| (VehicleId(i as u32), *v)).collect()
}

#[test]
fn angle_endpoints_and_altruistic_midpoint() {
    let u = utilities(&[0.8, 0.3, 0.5]);
    let cfg = SvoConfig::default();
    let ego = svo_reward(VehicleId(0), &u, &[VehicleId(1)], &[VehicleId(2)], None, 0.0, &cfg).unwrap();
    assert_eq!(ego.total, 0.8);
    let alt = svo_reward(VehicleId(0), &u, &[VehicleId(1)], &[VehicleId(2)], None, FRAC_PI_2, &cfg).unwrap();
    assert!((alt.total - 0.8).abs() < 1e-15 && (alt.total - (0.3 + 0.5)).abs() < 1e-12);
    let mid = combine(0.8, 0.4, 0.0, FRAC_PI_4);
    assert!((mid.total - 1.2 / 2f64.sqrt()).abs() < 1e-12);
    assert!((mid.total - 0.8485).abs() < 1e-4);
}

#[test]
fn lane_change_at_full_speed() {
    let cfg = SvoConfig {
        w_speed: 0.5,
        w_distance: 0.5,
        w_lane_change_cost: 0.1,
        ..SvoConfig::default()
    };
    let info = VehicleStepInfo {
        speed: SCALE.v_max,
        distance_increment: SCALE.distance_max,
        lane_change: true,
        ..VehicleStepInfo::default()
    };
    assert!((individual_utility(&info, &cfg, SCALE) - 0.9).abs() < 1e-12);
}

#[test]
fn merger_is_counted_once() {
    let u = utilities(&[0.2, 0.9, 0.1, 0.7]);
    let m = VehicleId(3);
    let cfg = SvoConfig::default();
    let humans = [VehicleId(2)];
    let a = svo_reward(VehicleId(0), &u, &[VehicleId(1)], &humans, Some(m), 0.7, &cfg).unwrap();
    let b = svo_reward(VehicleId(0), &u, &[VehicleId(1)], &[VehicleId(2), m], Some(m), 0.7, &cfg).unwrap();
    assert_eq!(a, b);
    assert!((a.r_humans - 0.4).abs() < 1e-12);
    let sum = SvoConfig {
        aggregation: SocialAggregation::Sum,
        ..cfg
    };
    let c = svo_reward(VehicleId(0), &u, &[VehicleId(1)], &[VehicleId(2), m, m], Some(m), 0.7, &sum).unwrap();
    assert!((c.r_humans - 0.8).abs() < 1e-12);
}

proptest! {
    #[test]
    fn decomposition_identity(r_ego in -6.0f64..2.0, r_a in -6.0f64..2.0, r_h in -6.0f64..2.0, phi in 0.0f64..=FRAC_PI_2) {
        let b = combine(r_ego, r_a, r_h, phi);
        prop_assert!((b.total - (phi.cos() * r_ego + phi.sin() * (r_a + r_h))).abs() < 1e-12);
    }

    /// d total / d phi = -sin(phi) r_ego + cos(phi) social, against central differences of the full reward.
    #[test]
    fn angle_derivative_matches_finite_differences(
        vals in prop::collection::vec(-5.0f64..2.0, 4),
        phi in 0.01f64..(FRAC_PI_2 - 0.01),
    ) {
        let u = utilities(&vals);
        let cfg = SvoConfig::default();
        let at = |p: f64| svo_reward(VehicleId(0), &u, &[VehicleId(1)], &[VehicleId(2)], Some(VehicleId(3)), p, &cfg).unwrap();
        let b = at(phi);
        let h = 1e-6;
        let fd = (at(phi + h).total - at(phi - h).total) / (2.0 * h);
        let analytic = -phi.sin() * b.r_ego + phi.cos() * b.social();
        prop_assert!((fd - analytic).abs() < 1e-7, "fd {} analytic {}", fd, analytic);
    }
}
