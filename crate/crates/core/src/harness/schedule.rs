use super::config::ScheduleConfig;

/// `(eps1, eps2, eps3)` at step `t`: critic, actors, autoencoders.
pub fn schedules(t: u64, cfg: &ScheduleConfig) -> [f64; 3] {
    std::array::from_fn(|k| cfg.eps0[k] / (1.0 + t as f64 / cfg.horizon[k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_at_zero() {
        assert_eq!(schedules(0, &ScheduleConfig::default()), [1e-3, 1e-4, 1e-5]);
    }

    #[test]
    fn halves_at_horizon() {
        let c = ScheduleConfig::default();
        for k in 0..3 {
            let e = schedules(c.horizon[k] as u64, &c)[k];
            assert!((e - c.eps0[k] / 2.0).abs() <= 1e-18, "{k}");
        }
    }

    proptest! {
        #[test]
        fn ordering_and_separation_hold(
            t in 0u64..10_000_000,
            dt in 1u64..1_000_000,
            e in (1e-6f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
            h in (1.0f64..1e6, 0.0f64..1.0, 0.0f64..1.0),
        ) {
            let eps0 = [e.0, e.0 * e.1, e.0 * e.1 * e.2];
            let h1 = h.0;
            let h2 = (h1 * h.1).max(1.0).min(h1);
            let h3 = (h2 * h.2).max(1.0).min(h2);
            let c = ScheduleConfig { eps0, horizon: [h1, h2, h3] };
            let a = schedules(t, &c);
            let b = schedules(t + dt, &c);
            prop_assert!(a[0] >= a[1] && a[1] >= a[2]);
            for k in 0..3 {
                prop_assert!(b[k] <= a[k]);
            }
            // Ratios only shrink as time goes on.
            if a[0] > 0.0 && a[1] > 0.0 {
                prop_assert!(b[1] / b[0] <= a[1] / a[0] * (1.0 + 1e-12));
                prop_assert!(b[2] / b[1] <= a[2] / a[1] * (1.0 + 1e-12));
            }
        }
    }
}
