//! Sampling, density and moment invariants shared by every policy class.

use proptest::prelude::*;

use proxbridge::data::ActionInterval;
use proxbridge::numerics::NormalRule;
use proxbridge::policy::{Init, PolicyClass, PolicyKind};
use proxbridge::rng::rng_from_seed;

const KINDS: [PolicyKind; 5] = [
    PolicyKind::BetaLinear,
    PolicyKind::GaussianLinear,
    PolicyKind::BetaMlp,
    PolicyKind::GaussianMlp,
    PolicyKind::BetaExpit,
];

fn class(kind: PolicyKind, interval: ActionInterval) -> PolicyClass {
    let c = PolicyClass::new(kind, 2, interval).unwrap();
    if kind.is_mlp() {
        c.with_hidden(3).unwrap()
    } else {
        c
    }
}

fn params(c: &PolicyClass, seed: u64) -> Vec<f64> {
    let mut z = c.init(Init::Random { sd: 0.5 }, seed);
    if c.kind == PolicyKind::BetaExpit {
        // Keep the bounded scale parameters away from their lower edge.
        z.iter_mut().for_each(|v| *v = v.abs() + 0.5);
    }
    c.project(&mut z);
    z
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn samples_stay_in_the_interval(
        k in 0usize..5,
        seed in 0u64..10_000,
        o in prop::collection::vec(-3.0..3.0f64, 2),
        lo in -2.0..0.0f64,
        width in 0.5..3.0f64,
    ) {
        let interval = ActionInterval::new(lo, lo + width).unwrap();
        let c = class(KINDS[k], interval);
        let z = params(&c, seed);
        let mut rng = rng_from_seed(seed);
        for _ in 0..50 {
            let a = c.sample(&z, &o, &mut rng);
            prop_assert!(a >= interval.lo && a <= interval.hi, "{a} outside {interval:?}");
            let dens = c.density(&z, &o, a).unwrap();
            prop_assert!(dens.value.is_finite() && dens.value >= 0.0);
        }
    }

    #[test]
    fn log_density_gradient_matches_differences(
        k in 0usize..5,
        seed in 0u64..10_000,
        o in prop::collection::vec(-2.0..2.0f64, 2),
        b in 0.1..0.9f64,
    ) {
        let c = class(KINDS[k], ActionInterval::default());
        let z = params(&c, seed);
        let a = 2.0 * b - 1.0;
        let g = c.grad_zeta_log_density(&z, &o, a).unwrap();
        for j in 0..z.len() {
            let h = 1e-6;
            let (mut up, mut dn) = (z.clone(), z.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (c.density(&up, &o, a).unwrap().log - c.density(&dn, &o, a).unwrap().log) / (2.0 * h);
            prop_assert!((fd - g[j]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {j}: {fd} vs {}", g[j]);
        }
    }
}

#[test]
fn moments_match_sample_averages() {
    let rule = NormalRule::new(21).unwrap();
    let o = [0.7, -0.4];
    for kind in KINDS {
        let c = class(kind, ActionInterval::default());
        let z = params(&c, 3);
        let mut exact = [0.0; 3];
        c.action_moments(&z, &o, &rule, &mut exact);
        let mut rng = rng_from_seed(11);
        let n = 40_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let a = c.sample(&z, &o, &mut rng);
            sums[0] += 1.0;
            sums[1] += a;
            sums[2] += a * a;
        }
        assert!((exact[0] - 1.0).abs() < 1e-12);
        for e in 1..3 {
            let mc = sums[e] / n as f64;
            // |a| <= 1, so each moment's sample SE is at most 1/sqrt(n).
            assert!((mc - exact[e]).abs() < 5.0 / (n as f64).sqrt(), "{kind:?} moment {e}: {mc} vs {}", exact[e]);
        }
    }
}
