/// Default ratio cap `λ`.
pub const DEFAULT_CLIP_RATIO: f64 = 3.0;

/// `min(h(a), λ π(a))` per action. The result is not renormalized.
pub fn clip_credit(h: &[f64], pi: &[f64], lambda: f64) -> Vec<f64> {
    let mut out = h.to_vec();
    clip_credit_into(&mut out, pi, lambda);
    out
}

pub fn clip_credit_into(h: &mut [f64], pi: &[f64], lambda: f64) {
    for (w, &p) in h.iter_mut().zip(pi) {
        *w = w.min(lambda * p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn example_values() {
        let c = clip_credit(&[0.9, 0.1], &[0.2, 0.8], 3.0);
        assert!((c[0] - 0.6).abs() < 1e-15);
        assert_eq!(c[1], 0.1);
    }

    #[test]
    fn infinite_ratio_is_inactive() {
        let h = [0.7, 0.2, 0.1];
        assert_eq!(clip_credit(&h, &[0.01, 0.01, 0.98], f64::INFINITY), h.to_vec());
    }

    proptest! {
        #[test]
        fn bounded_by_both_arguments(
            raw_h in prop::collection::vec(0.01f64..1.0, 4),
            raw_p in prop::collection::vec(0.01f64..1.0, 4),
            lambda in 0.1f64..10.0,
        ) {
            let zh: f64 = raw_h.iter().sum();
            let zp: f64 = raw_p.iter().sum();
            let h: Vec<f64> = raw_h.iter().map(|x| x / zh).collect();
            let p: Vec<f64> = raw_p.iter().map(|x| x / zp).collect();
            let c = clip_credit(&h, &p, lambda);
            for a in 0..4 {
                prop_assert!(c[a] <= h[a]);
                prop_assert!(c[a] <= lambda * p[a]);
            }
        }

        #[test]
        fn policy_is_a_fixed_point(raw in prop::collection::vec(0.01f64..1.0, 3), lambda in 1.0f64..10.0) {
            let z: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / z).collect();
            prop_assert_eq!(clip_credit(&p, &p, lambda), p);
        }
    }
}
