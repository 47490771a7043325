use altruist_core::drivers::{idm_accel, merge_gap_acceptable, merging_hv_policy, mobil_decide, LaneNeighbors, MergerView, MobilSituation, Neighbor};
use altruist_core::dynamics::{VehicleKind, VehicleState};
use altruist_core::road::{LaneRef, RoadConfig, RoadNetwork};
use altruist_core::{IdmParams, LaneDecision, MobilParams, Vec2, VehicleId};
use proptest::prelude::*;

fn idm() -> IdmParams {
    IdmParams {
        desired_speed: 30.0,
        time_headway: 1.5,
        min_gap: 2.0,
        max_accel: 3.0,
        comfort_decel: 5.0,
        exponent: 4.0,
        max_brake: 8.0,
    }
}

/// Root of a decreasing-or-increasing scalar function on `[lo, hi]`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = f(lo);
    assert!(f_lo * f(hi) <= 0.0, "no sign change on [{lo}, {hi}]");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Equilibrium gap written out from the model equation, independent of `idm_accel`.
fn equilibrium_gap(v: f64, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / p.desired_speed).powf(p.exponent);
    let s_star = p.min_gap + v * p.time_headway;
    bisect(|s| free - (s_star / s).powi(2), p.min_gap, 1e4)
}

#[test]
fn equilibrium_gap_oracle() {
    let p = idm();
    let s_e = equilibrium_gap(20.0, &p);
    assert!(idm_accel(20.0, Some(Neighbor::new(s_e, 20.0)), &p).abs() < 1e-9);
    assert!(idm_accel(20.0, Some(Neighbor::new(s_e * 0.9, 20.0)), &p) < 0.0);
    assert!(idm_accel(20.0, Some(Neighbor::new(s_e * 1.1, 20.0)), &p) > 0.0);
}

#[test]
fn platoon_converges_to_equilibrium_gaps() {
    let p = idm();
    let v_lead = 20.0;
    let len = 5.0;
    let s_e = equilibrium_gap(v_lead, &p);
    // leader followed by 5 vehicles with uneven gaps and speeds
    let mut x = vec![0.0, -25.0, -70.0, -100.0, -160.0, -190.0];
    let mut v = vec![v_lead, 15.0, 24.0, 18.0, 22.0, 10.0];
    let dt = 0.05;
    for _ in 0..(120.0 / dt) as usize {
        let acc: Vec<f64> = (1..x.len())
            .map(|i| idm_accel(v[i], Some(Neighbor::new(x[i - 1] - x[i] - len, v[i - 1])), &p))
            .collect();
        x[0] += v[0] * dt;
        for i in 1..x.len() {
            v[i] = (v[i] + acc[i - 1] * dt).max(0.0);
            x[i] += v[i] * dt;
        }
    }
    for i in 1..x.len() {
        let gap = x[i - 1] - x[i] - len;
        assert!((gap - s_e).abs() / s_e < 0.01, "vehicle {i}: gap {gap} vs {s_e}");
    }
}

fn blocked_situation(gain: f64, p: &IdmParams) -> MobilSituation {
    let v = 20.0;
    let free = idm_accel(v, None, p);
    // leader gap that leaves the ego exactly `gain` below free-road acceleration
    let gap = bisect(|s| idm_accel(v, Some(Neighbor::new(s, v)), p) - (free - gain), p.min_gap + 0.1, 1e3);
    MobilSituation {
        speed: v,
        length: 5.0,
        current: LaneNeighbors {
            leader: Some(Neighbor::new(gap, v)),
            follower: None,
        },
        left: Some(LaneNeighbors::default()),
        right: None,
    }
}

#[test]
fn blocked_ego_moves_left_into_empty_lane() {
    let p = idm();
    let sit = blocked_situation(2.0, &p);
    let mobil = MobilParams {
        politeness: 0.5,
        a_threshold: 0.1,
        b_safe: 4.0,
    };
    let gain = idm_accel(sit.speed, None, &p) - idm_accel(sit.speed, sit.current.leader, &p);
    assert!((gain - 2.0).abs() < 1e-9);
    assert_eq!(mobil_decide(&sit, &p, &mobil), LaneDecision::Left);
    // the same incentive below the threshold keeps the lane
    let high = MobilParams { a_threshold: 2.5, ..mobil };
    assert_eq!(mobil_decide(&sit, &p, &high), LaneDecision::Keep);
}

fn neighbor() -> impl Strategy<Value = Option<Neighbor>> {
    prop::option::of((0.5f64..80.0, 0.0f64..32.0).prop_map(|(g, v)| Neighbor::new(g, v)))
}

fn lane() -> impl Strategy<Value = LaneNeighbors> {
    (neighbor(), neighbor()).prop_map(|(leader, follower)| LaneNeighbors { leader, follower })
}

proptest! {
    #[test]
    fn mobil_never_violates_safety(
        speed in 0.0f64..32.0,
        current in lane(),
        left in prop::option::of(lane()),
        right in prop::option::of(lane()),
        politeness in 0.0f64..=1.0,
        b_safe in 0.5f64..8.0,
    ) {
        let p = idm();
        let mobil = MobilParams { politeness, a_threshold: 0.1, b_safe };
        let sit = MobilSituation { speed, length: 5.0, current, left, right };
        let target = match mobil_decide(&sit, &p, &mobil) {
            LaneDecision::Keep => return Ok(()),
            LaneDecision::Left => left.unwrap(),
            LaneDecision::Right => right.unwrap(),
        };
        if let Some(f) = target.follower {
            prop_assert!(idm_accel(f.speed, Some(Neighbor::new(f.gap, speed)), &p) >= -b_safe);
        }
    }

    #[test]
    fn idm_monotone_in_speed_and_gap(v in 0.0f64..35.0, dv in 0.0f64..5.0, gap in 0.5f64..100.0, dg in 0.0f64..20.0, vl in 0.0f64..35.0) {
        let p = idm();
        let l = Some(Neighbor::new(gap, vl));
        prop_assert!(idm_accel(v + dv, l, &p) <= idm_accel(v, l, &p));
        prop_assert!(idm_accel(v, Some(Neighbor::new(gap + dg, vl)), &p) >= idm_accel(v, l, &p));
    }
}

fn merger(s: f64, speed: f64) -> VehicleState {
    VehicleState {
        id: VehicleId(9),
        kind: VehicleKind::MergingHv,
        position: Vec2::new(s, -4.0),
        heading: 0.0,
        speed,
        length: 5.0,
        width: 2.0,
        current_lane: LaneRef::Ramp,
        target_lane: LaneRef::Ramp,
        target_speed: 25.0,
    }
}

#[test]
fn merge_accepted_into_exact_minimum_gap() {
    let p = idm();
    let mobil = MobilParams::default();
    let v = 20.0;
    let (vf, vl) = (25.0, 18.0);
    // smallest gaps at which neither the new follower nor the merger brakes harder than b_safe
    let g_follow = bisect(|g| idm_accel(vf, Some(Neighbor::new(g, v)), &p) + mobil.b_safe, 0.01, 500.0);
    let g_lead = bisect(|g| idm_accel(v, Some(Neighbor::new(g, vl)), &p) + mobil.b_safe, 0.01, 500.0);
    let at = |gf: f64, gl: f64| LaneNeighbors {
        leader: Some(Neighbor::new(gl, vl)),
        follower: Some(Neighbor::new(gf, vf)),
    };
    let eps = 1e-9;
    assert!(merge_gap_acceptable(v, &at(g_follow + eps, g_lead + eps), &p, &mobil));
    assert!(!merge_gap_acceptable(v, &at(g_follow * 0.99, g_lead + eps), &p, &mobil));
    assert!(!merge_gap_acceptable(v, &at(g_follow + eps, g_lead * 0.99), &p, &mobil));

    let road = RoadNetwork::new(RoadConfig::default()).unwrap();
    let view = MergerView {
        s: 450.0,
        current: LaneNeighbors::default(),
        lane0: at(g_follow + eps, g_lead + eps),
    };
    let cmd = merging_hv_policy(&merger(450.0, v), &view, &road, &p, &mobil);
    assert_eq!(cmd.target_lane, LaneRef::Highway(0));
}

#[test]
fn empty_lane_merges_on_first_decision_in_zone() {
    let p = idm();
    let road = RoadNetwork::new(RoadConfig::default()).unwrap();
    let (ms, _) = road.merge_zone();
    let view = |s: f64| MergerView {
        s,
        current: LaneNeighbors::default(),
        lane0: LaneNeighbors::default(),
    };
    let before = merging_hv_policy(&merger(ms - 1.0, 20.0), &view(ms - 1.0), &road, &p, &MobilParams::default());
    assert_eq!(before.target_lane, LaneRef::Ramp);
    let inside = merging_hv_policy(&merger(ms, 20.0), &view(ms), &road, &p, &MobilParams::default());
    assert_eq!(inside.target_lane, LaneRef::Highway(0));
}

#[test]
fn blocked_lane_zero_stops_the_merger_before_the_lane_end() {
    let p = idm();
    let mobil = MobilParams::default();
    let road = RoadNetwork::new(RoadConfig::default()).unwrap();
    let (_, me) = road.merge_zone();
    let blocked = LaneNeighbors {
        leader: Some(Neighbor::new(1.0, 25.0)),
        follower: Some(Neighbor::new(1.0, 25.0)),
    };
    let mut st = merger(330.0, 20.0);
    let dt = 1.0 / 15.0;
    for _ in 0..(60.0 / dt) as usize {
        let s = st.position.x;
        let view = MergerView {
            s,
            current: LaneNeighbors::default(),
            lane0: blocked,
        };
        let cmd = merging_hv_policy(&st, &view, &road, &p, &mobil);
        assert_eq!(cmd.target_lane, LaneRef::Ramp);
        st.speed = (st.speed + cmd.accel * dt).max(0.0);
        st.position.x += st.speed * dt;
    }
    assert!(st.speed < 0.05, "speed {}", st.speed);
    assert!(st.position.x + 0.5 * st.length < me);
}
