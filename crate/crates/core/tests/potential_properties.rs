use std::sync::Arc;

use proptest::prelude::*;

use mvexit::potentials::{make_builtin, Coupling, EffectivePotential, PotentialSpec};

fn dw1d() -> Arc<mvexit::PotentialModel> {
    Arc::new(make_builtin(&PotentialSpec::quadratic("doublewell1d", 0.1, Coupling::Attractive)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn mirrored_wells_agree(x in -4.0f64..4.0) {
        let m = dw1d();
        let left = EffectivePotential::new(m.clone(), &[-1.0]);
        let right = EffectivePotential::new(m, &[1.0]);
        prop_assert!((right.value(&[x]) - left.value(&[-x])).abs() <= 1e-12 * (1.0 + left.value(&[-x]).abs()));
    }

    #[test]
    fn effective_gradient_is_sum_of_parts(x in -4.0f64..4.0, y in -3.0f64..3.0) {
        let m = Arc::new(make_builtin(&PotentialSpec::gaussian("doublewell2d", 0.5, 1.0)).unwrap());
        let w = m.effective();
        let p = [x, y];
        let mut gv = [0.0; 2];
        let mut gf = [0.0; 2];
        m.grad_v(&p, &mut gv);
        let shifted: Vec<f64> = p.iter().zip(&m.attractor).map(|(u, a)| u - a).collect();
        m.grad_f(&shifted, &mut gf);
        let g = w.gradient_vec(&p);
        for i in 0..2 {
            prop_assert_eq!(g[i], gv[i] + gf[i]);
            let mut hi = p;
            let mut lo = p;
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            let fd = (w.value(&hi) - w.value(&lo)) / 2e-6;
            prop_assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn height_vanishes_only_at_the_attractor(x in -1.9f64..-0.05) {
        let w = dw1d().effective();
        let h = w.height(&[x]);
        prop_assert!(h >= 0.0);
        if (x + 1.0).abs() > 1e-3 {
            prop_assert!(h > 0.0);
        }
    }
}
