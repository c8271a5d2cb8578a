use prunetrain::cost::{layer_costs, linear_schedule_remaining, LatencyInput, LayerGeom, PruneEntry, SavingsInput};
use proptest::prelude::*;

fn geom() -> impl Strategy<Value = LayerGeom> {
    (1usize..16, 1usize..6, 1usize..3, 1usize..33, 1usize..33)
        .prop_filter_map("integral output", |(n, k, s, i, o)| LayerGeom::new(n, k, i, o, s).ok())
}

proptest! {
    #[test]
    fn savings_do_not_depend_on_the_per_epoch_count(
        n in 1usize..100, m in 0usize..40, rate in 0.0f64..0.95, x1 in 1.0f64..1e12, x2 in 1.0f64..1e12
    ) {
        let a = SavingsInput { n, m, target_rate: rate, x: x1 }.savings().unwrap();
        let b = SavingsInput { n, m, target_rate: rate, x: x2 }.savings().unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn savings_match_the_general_form_and_a_closed_sum(
        n in 1usize..100, m in 0usize..40, rate in 0.0f64..0.95
    ) {
        let s = SavingsInput { n, m, target_rate: rate, x: 1.0 };
        let general = s.savings_general(&linear_schedule_remaining(n)).unwrap();
        let nf = n as f64;
        let pwt = nf * (101.0 - (nf + 1.0) / 2.0) / 100.0;
        let closed = 1.0 - pwt / (nf + m as f64 * (1.0 - rate));
        prop_assert!((s.savings().unwrap() - general).abs() < 1e-12);
        prop_assert!((general - closed).abs() < 1e-12);
    }

    #[test]
    fn latency_gap_is_retraining_minus_extra_scans(
        n in 1f64..200.0, m in 0f64..50.0, b in 1f64..1e4, t_b in 0f64..10.0, t_l in 0f64..1e3
    ) {
        let lat = LatencyInput { n, m, b, t_b, t_l1norm: t_l };
        let gap = lat.latency_prt().unwrap() - lat.latency_pwt().unwrap();
        let expected = m * b * t_b - (n - 1.0) * t_l;
        prop_assert!((gap - expected).abs() <= 1e-9 * (1.0 + expected.abs() + n * b * t_b));
    }

    #[test]
    fn macs_scale_with_the_batch_and_weight_traffic_does_not(
        g in geom(), batch in 1usize..9, pp in 0u8..5, pc in 0u8..5
    ) {
        let p = PruneEntry { p_prev: pp as f64 * 25.0, p_cur: pc as f64 * 25.0 };
        let one = layer_costs(&g, &p, 1).unwrap();
        let many = layer_costs(&g, &p, batch).unwrap();
        let b = batch as f64;
        prop_assert_eq!(many.forward_macs, b * one.forward_macs);
        prop_assert_eq!(many.error_macs, b * one.error_macs);
        prop_assert_eq!(many.dw_macs, b * one.dw_macs);
        prop_assert_eq!(many.input_reads, b * one.input_reads);
        prop_assert_eq!(many.weight_reads, one.weight_reads);
        prop_assert_eq!(many.weight_writes, one.weight_writes);
    }

    #[test]
    fn pruning_never_adds_work(g in geom(), pp in 0u8..4, pc in 0u8..4) {
        let lo = PruneEntry { p_prev: pp as f64 * 25.0, p_cur: pc as f64 * 25.0 };
        let hi = PruneEntry { p_prev: lo.p_prev + 25.0, p_cur: lo.p_cur + 25.0 };
        let (a, b) = (layer_costs(&g, &lo, 1).unwrap(), layer_costs(&g, &hi, 1).unwrap());
        prop_assert!(b.forward_macs <= a.forward_macs);
        prop_assert!(b.error_macs <= a.error_macs);
        prop_assert!(b.dw_macs <= a.dw_macs);
        prop_assert!(b.total_macs() <= a.total_macs());
    }
}

#[test]
fn unit_stride_r_equals_the_kernel() {
    for (n, k) in [(5, 3), (12, 5), (4, 1), (9, 9)] {
        assert_eq!(LayerGeom::new(n, k, 1, 1, 1).unwrap().r(), k as f64);
    }
}

#[test]
fn percentages_outside_the_range_are_rejected() {
    let g = LayerGeom::new(6, 3, 2, 2, 1).unwrap();
    assert!(layer_costs(&g, &PruneEntry { p_prev: -1.0, p_cur: 0.0 }, 1).is_err());
    assert!(layer_costs(&g, &PruneEntry { p_prev: 0.0, p_cur: 100.5 }, 1).is_err());
}
