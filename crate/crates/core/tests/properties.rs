use proptest::prelude::*;

use quadmix::cmaes::repair;
use quadmix::gait::GaitType;
use quadmix::policy::{compose, softmax, GaussianActionDistribution};
use quadmix::reward::{rbf_scalar, select_reference_gait, SwitchCriteria, MAX_GOAL_DISTANCE};
use quadmix::telemetry::Command;

fn joints(lo: f64, hi: f64) -> impl Strategy<Value = [f64; 12]> {
    prop::array::uniform12(lo..hi)
}

fn experts() -> impl Strategy<Value = Vec<GaussianActionDistribution>> {
    prop::collection::vec((joints(-2.0, 2.0), joints(0.01, 2.0)), 5).prop_map(|v| {
        v.into_iter()
            .map(|(m, s)| GaussianActionDistribution::new(m, s).unwrap())
            .collect()
    })
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, 5).prop_map(|l| softmax(&l))
}

proptest! {
    #[test]
    fn composite_mean_stays_in_expert_hull(d in experts(), w in weights()) {
        let c = compose(&d, &w).unwrap();
        for j in 0..12 {
            let lo = d.iter().map(|e| e.mean[j]).fold(f64::INFINITY, f64::min);
            let hi = d.iter().map(|e| e.mean[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c.mean[j] >= lo - 1e-12 && c.mean[j] <= hi + 1e-12);
            prop_assert!(c.std[j] > 0.0);
        }
    }

    #[test]
    fn weight_scaling_scales_std_only(d in experts(), w in weights(), k in 0.1..10.0f64) {
        let a = compose(&d, &w).unwrap();
        let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
        let b = compose(&d, &scaled).unwrap();
        for j in 0..12 {
            prop_assert!((a.mean[j] - b.mean[j]).abs() < 1e-12);
            prop_assert!((a.std[j] / k - b.std[j]).abs() <= 1e-12 * a.std[j]);
        }
    }

    #[test]
    fn equal_std_gives_weighted_mean(means in prop::collection::vec(joints(-2.0, 2.0), 5), s in 0.05..2.0f64, w in weights()) {
        let d: Vec<_> = means.iter().map(|m| GaussianActionDistribution::new(*m, [s; 12]).unwrap()).collect();
        let c = compose(&d, &w).unwrap();
        for j in 0..12 {
            let expect: f64 = means.iter().zip(&w).map(|(m, wi)| m[j] * wi).sum();
            prop_assert!((c.mean[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_selects_expert_exactly(d in experts(), k in 0usize..5) {
        let mut w = vec![0.0; 5];
        w[k] = 1.0;
        let c = compose(&d, &w).unwrap();
        prop_assert_eq!(c.mean, d[k].mean);
        prop_assert_eq!(c.std, d[k].std);
    }

    #[test]
    fn reference_gait_is_monotone_in_distance(x in (0.0..15.0f64, 0.0..15.0f64), a in 0.0..20.0f64, b in 0.0..20.0f64) {
        let c = repair([x.0, x.1]);
        let rank = |g: GaitType| match g {
            GaitType::Trot => 0,
            GaitType::Bound => 1,
            GaitType::Gallop => 2,
            other => panic!("unexpected {other}"),
        };
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        let gn = select_reference_gait(near, &c).unwrap();
        let gf = select_reference_gait(far, &c).unwrap();
        prop_assert!(rank(gn) <= rank(gf));
        prop_assert_eq!(gn == GaitType::Trot, near < c.x1);
        prop_assert_eq!(gf == GaitType::Gallop, far >= c.x2);
    }

    #[test]
    fn repaired_criteria_are_feasible(x1 in -50.0..50.0f64, x2 in -50.0..50.0f64) {
        let c = repair([x1, x2]);
        prop_assert!(0.0 <= c.x1 && c.x1 < c.x2 && c.x2 <= MAX_GOAL_DISTANCE);
        prop_assert!(c.validate().is_ok());
        prop_assert!(SwitchCriteria::new(c.x1, c.x2).is_ok());
    }

    #[test]
    fn rbf_is_bounded_and_peaks_at_target(x in -10.0..10.0f64, t in -10.0..10.0f64, alpha in -10.0..-0.01f64) {
        let v = rbf_scalar(x, t, alpha);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(rbf_scalar(t, t, alpha), 1.0);
    }

    #[test]
    fn commands_round_trip_through_json(gx in -1.0..=1.0f64, gy in -1.0..=1.0f64, p in prop::array::uniform3(-100.0..100.0f64), kind in 0usize..3) {
        let cmd = match kind {
            0 => Command::SetGoal([gx, gy]),
            1 => Command::Push(p),
            _ => Command::Reset,
        };
        let text = cmd.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&v["v"], &serde_json::json!(1));
        prop_assert_eq!(Command::parse(&text).unwrap(), cmd);
    }

    #[test]
    fn out_of_range_goals_are_rejected(gx in 1.0001..100.0f64, sign in prop::bool::ANY) {
        let gx = if sign { gx } else { -gx };
        let msg = format!(r#"{{"v":1,"set_goal":[{gx},0]}}"#);
        prop_assert!(Command::parse(&msg).is_err());
    }
}
