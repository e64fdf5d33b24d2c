//! Property tests over random networks, boxes and programs.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specverify::bounds::{propagate_bounds, InputRegion};
use specverify::falsify::evaluate;
use specverify::lp::{LinearConstraint, LinearProgram, LpStatus, VarId};
use specverify::relax::{exp_relaxation, mccormick, relu_relaxation};
use specverify::verify::{build_relaxation, format_sig, VerifyOptions};

use common::{random_net, random_spec, vertex_enumeration, SPEC_KINDS};

fn region(rng: &mut ChaCha8Rng, dim: usize) -> InputRegion {
    let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    InputRegion::around(center, rng.gen_range(0.0..0.3)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interval_bounds_contain_every_activation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, &[3, 6, 5, 2]);
        let r = region(&mut rng, 3);
        let b = propagate_bounds(&net, &r).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = r.lower().iter().zip(r.upper()).map(|(&l, &u)| if u > l { rng.gen_range(l..=u) } else { l }).collect();
            for (k, v) in net.forward_trace(&x).unwrap().iter().enumerate() {
                for (i, vi) in v.iter().enumerate() {
                    prop_assert!(b.lower(k)[i] - 1e-12 <= *vi && *vi <= b.upper(k)[i] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn relaxation_bounds_sampled_values(seed in any::<u64>(), kind in 0..SPEC_KINDS.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, &[2, 4, 3]);
        let spec = random_spec(&mut rng, SPEC_KINDS[kind], 2, 3);
        let regions: Vec<InputRegion> = (0..spec.arity()).map(|_| region(&mut rng, 2)).collect();
        let nets = vec![&net; regions.len()];
        let relax = build_relaxation(&nets, &spec, &regions, &VerifyOptions::default()).unwrap();
        let lp = relax.solve().unwrap();
        let shift = relax.encoded.shift;
        for _ in 0..200 {
            let xs: Vec<Vec<f64>> = regions
                .iter()
                .map(|r| r.lower().iter().zip(r.upper()).map(|(&l, &u)| if u > l { rng.gen_range(l..=u) } else { l }).collect())
                .collect();
            let ys: Vec<Vec<f64>> = xs.iter().map(|x| net.forward(x).unwrap()).collect();
            let cleared = spec.cleared_value(&xs, &ys, shift).unwrap();
            prop_assert!(lp >= cleared - 1e-6, "lp {} < cleared {}", lp, cleared);
            // the sign of the cleared value is the sign of F
            let f = evaluate(&nets, &spec, &xs).unwrap();
            prop_assert!(f <= 0.0 || cleared > 0.0 || cleared.abs() < 1e-9);
        }
    }

    #[test]
    fn simplex_matches_vertices(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=4);
        let mut lp = LinearProgram::new();
        let vars: Vec<VarId> = (0..n)
            .map(|j| {
                let l = rng.gen_range(-3.0..1.0);
                lp.add_var(format!("v{j}"), l, l + rng.gen_range(0.0..4.0))
            })
            .collect();
        for _ in 0..rng.gen_range(1..=6) {
            let terms: Vec<(VarId, f64)> = vars.iter().map(|&v| (v, rng.gen_range(-2.0..2.0))).collect();
            let rhs = rng.gen_range(-2.0..2.0);
            lp.add_constraint(if rng.gen_bool(0.5) { LinearConstraint::le(terms, rhs) } else { LinearConstraint::ge(terms, rhs) });
        }
        lp.set_objective(vars.iter().map(|&v| (v, rng.gen_range(-1.0..1.0))), 0.0);
        let sol = lp.solve().unwrap();
        match vertex_enumeration(&lp) {
            Some(best) => {
                prop_assert_eq!(sol.status, LpStatus::Optimal);
                prop_assert!((sol.objective - best).abs() <= 1e-7);
                prop_assert!(lp.max_violation(&sol.values) <= 1e-7);
            }
            None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
        }
    }

    #[test]
    fn atoms_contain_their_graphs(l in -4.0f64..4.0, w in 0.0f64..4.0, t in 0.0f64..=1.0, l2 in -4.0f64..4.0, w2 in 0.0f64..4.0, t2 in 0.0f64..=1.0) {
        let (u, u2) = (l + w, l2 + w2);
        let (p, q) = (l + t * w, l2 + t2 * w2);
        let (v, a, x) = (VarId(0), VarId(1), VarId(2));
        let relu = relu_relaxation(v, a, l, u).unwrap();
        prop_assert!(relu.max_violation(|id| [p, p.max(0.0)][id.0]) <= 1e-9);
        let e = exp_relaxation(v, a, l, u, 5).unwrap();
        prop_assert!(e.max_violation(|id| [p, p.exp()][id.0]) <= 1e-9 * p.exp().max(1.0));
        let m = mccormick(v, a, x, (l, u), (l2, u2)).unwrap();
        prop_assert!(m.max_violation(|id| [p, q, p * q][id.0]) <= 1e-9);
    }

    #[test]
    fn six_significant_digits(v in -1e6f64..1e6) {
        let text = format_sig(v);
        let back: f64 = text.parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-6 * v.abs().max(1e-300));
    }
}
