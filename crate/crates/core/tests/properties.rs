use proptest::prelude::*;

use lanechange::gap::{paper_literal_coefficient, wls_affine_slope};
use lanechange::risk::{faz_filter, histogram, risk_fractions, ttc, GapObservation};
use lanechange::stats::mww_test;
use lanechange::synth::LateralProfile;
use lanechange::{Classification, GevParams};

/// Two-sided p from every split of the ranks 1..=n1+n2.
fn enumerated_p(n1: usize, n2: usize, u_obs: f64) -> f64 {
    let n = n1 + n2;
    let (mut lower, mut upper, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let rank_sum: usize = (0..n).filter(|b| mask & (1 << b) != 0).map(|b| b + 1).sum();
        let u = (rank_sum - n1 * (n1 + 1) / 2) as f64;
        total += 1;
        lower += (u <= u_obs) as u64;
        upper += (u >= u_obs) as u64;
    }
    (2.0 * lower.min(upper) as f64 / total as f64).min(1.0)
}

fn distinct(v: Vec<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for x in v {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn class_strategy() -> impl Strategy<Value = Classification> {
    prop_oneof![
        Just(Classification::Mlc),
        Just(Classification::Dlc),
        Just(Classification::Ambiguous),
    ]
}

fn observations() -> impl Strategy<Value = Vec<GapObservation>> {
    prop::collection::vec((class_strategy(), 0.5f64..120.0, -15.0f64..5.0), 1..80).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (class, range, range_rate))| GapObservation {
                event_id: format!("e{i}"),
                class,
                range,
                range_rate,
            })
            .collect()
    })
}

/// Bisection for the time a nondecreasing profile reaches `level`.
fn crossing(p: &LateralProfile, level: f64) -> f64 {
    let (mut lo, mut hi) = (p.start(), p.end());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p.position(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mww_exact_matches_enumeration(
        a in prop::collection::vec(-100.0f64..100.0, 1..=8),
        b in prop::collection::vec(-100.0f64..100.0, 1..=8),
    ) {
        let a = distinct(a);
        let b: Vec<f64> = distinct(b).into_iter().filter(|x| !a.contains(x)).collect();
        prop_assume!(!b.is_empty());
        let r = mww_test(&a, &b).unwrap();
        prop_assert!((r.p_two_sided - enumerated_p(a.len(), b.len(), r.u)).abs() < 1e-12);
        let u_oracle: f64 = a.iter().map(|x| b.iter().filter(|y| *y < x).count() as f64).sum();
        prop_assert_eq!(r.u, u_oracle);
    }

    #[test]
    fn wls_slope_solves_normal_equations(
        pts in prop::collection::btree_map(1u32..=10, 0.5f64..150.0, 2..=10),
        rate in 1.0f64..30.0,
    ) {
        let pts: Vec<(u32, f64)> = pts.into_iter().collect();
        // Solve [Σw Σwt; Σwt Σwt²] [a s]ᵀ = [Σwr Σwtr]ᵀ by Cramer's rule.
        let (mut s0, mut s1, mut s2, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(i, r) in &pts {
            let (w, t) = (1.0 / r, i as f64 / rate);
            s0 += w;
            s1 += w * t;
            s2 += w * t * t;
            r0 += w * r;
            r1 += w * t * r;
        }
        let oracle = (s0 * r1 - s1 * r0) / (s0 * s2 - s1 * s1);
        let got = wls_affine_slope(&pts, rate).unwrap();
        prop_assert!((got - oracle).abs() <= 1e-7 * (1.0 + oracle.abs()), "{got} vs {oracle}");
    }

    #[test]
    fn paper_literal_scales_with_range(
        pts in prop::collection::btree_map(1u32..=10, 0.5f64..150.0, 2..=10),
        c in 0.1f64..10.0,
    ) {
        let pts: Vec<(u32, f64)> = pts.into_iter().collect();
        let scaled: Vec<(u32, f64)> = pts.iter().map(|&(i, r)| (i, c * r)).collect();
        let a = paper_literal_coefficient(&pts).unwrap();
        let b = paper_literal_coefficient(&scaled).unwrap();
        prop_assert!((b - c * a).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn gev_pdf_integrates_to_cdf(
        shape in -0.4f64..0.4,
        loc in -5.0f64..5.0,
        scale in 0.2f64..4.0,
        p0 in 0.01f64..0.5,
        p1 in 0.5f64..0.99,
    ) {
        let g = GevParams { shape, loc, scale };
        let (a, b) = (g.quantile(p0).unwrap(), g.quantile(p1).unwrap());
        let n = 2000;
        let h = (b - a) / n as f64;
        let mut s = g.pdf(a) + g.pdf(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g.pdf(a + i as f64 * h);
        }
        let integral = s * h / 3.0;
        prop_assert!((integral - (g.cdf(b) - g.cdf(a))).abs() < 1e-8);
    }

    #[test]
    fn lateral_profile_crosses_levels_at_stage_times(
        t_hs in 5.0f64..20.0,
        d in prop::array::uniform3(0.3f64..8.0),
        lane_width in 3.0f64..4.0,
        vehicle_width in 1.6f64..2.8,
    ) {
        let stage = [t_hs, t_hs + d[0], t_hs + d[0] + d[1], t_hs + d[0] + d[1] + d[2]];
        let thr = 0.10;
        let p = LateralProfile::new(stage, lane_width, vehicle_width, thr);
        let levels = [
            thr,
            0.5 * (lane_width - vehicle_width),
            0.5 * (lane_width + vehicle_width),
            lane_width - thr,
        ];
        for (t, level) in stage.iter().zip(levels) {
            prop_assert!((crossing(&p, level) - t).abs() < 1e-9);
        }
        let mut prev = p.position(p.start());
        for i in 1..=2000 {
            let t = p.start() + (p.end() - p.start()) * i as f64 / 2000.0;
            let y = p.position(t);
            prop_assert!(y >= prev - 1e-12);
            prev = y;
        }
        prop_assert_eq!(p.position(p.start() - 1.0), 0.0);
        prop_assert_eq!(p.position(p.end() + 1.0), lane_width);
    }

    #[test]
    fn ttc_is_scale_invariant(range in 0.1f64..200.0, rate in -20.0f64..20.0, c in 0.01f64..100.0) {
        let a = ttc(range, rate).unwrap();
        let b = ttc(c * range, c * rate).unwrap();
        if a.is_infinite() {
            prop_assert!(b.is_infinite());
        } else {
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn faz_filter_is_idempotent(obs in observations(), faz in 5.0f64..100.0) {
        let once = faz_filter(&obs, faz);
        prop_assert!(once.iter().all(|o| o.range <= faz));
        prop_assert_eq!(faz_filter(&once, faz), once);
    }

    #[test]
    fn fractions_are_monotone_in_threshold(obs in observations(), t1 in 0.5f64..5.0, dt in 0.0f64..5.0) {
        let rf = risk_fractions(&obs, &[t1, t1 + dt]);
        let (lo, hi) = (&rf.per_threshold[0], &rf.per_threshold[1]);
        if let (Some(a), Some(b)) = (lo.mlc, hi.mlc) {
            prop_assert!(a <= b);
        }
        if let (Some(a), Some(b)) = (lo.dlc, hi.dlc) {
            prop_assert!(a <= b);
        }
        let n_mlc = obs.iter().filter(|o| o.class == Classification::Mlc).count();
        prop_assert_eq!(rf.mlc_events, n_mlc);
    }

    #[test]
    fn histogram_accounts_for_every_value(
        values in prop::collection::vec(-50.0f64..150.0, 1..200),
        width in 0.1f64..20.0,
    ) {
        let h = histogram(&values, width);
        prop_assert_eq!(h.counts.iter().sum::<usize>(), values.len());
        prop_assert_eq!(h.edges.len(), h.counts.len() + 1);
        prop_assert!((h.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for v in &values {
            prop_assert!(*v >= h.edges[0] && *v < h.edges[h.edges.len() - 1]);
        }
    }
}

#[test]
fn worked_mww_example() {
    let r = mww_test(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
    assert_eq!(r.p_two_sided, 1.0 / 3.0);
}
