use agmt_core::autodiff::{grad_check, Tape, Tensor, Var};
use agmt_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum(op(params) * w)` for a fixed random weighting `w`.
fn check(seed: u64, shapes: &[(usize, usize)], op: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<Tensor> = shapes.iter().map(|&(r, c)| random(&mut rng, r, c)).collect();
    let probe = {
        let mut t = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| t.constant(p.clone())).collect();
        let out = op(&mut t, &vars).unwrap();
        t.value(out).shape()
    };
    let w = random(&mut rng, probe[0], probe[1]);
    let report = grad_check(
        |t, v| {
            let y = op(t, v)?;
            let wc = t.constant(w.clone());
            let y = t.mul(y, wc)?;
            Ok(t.reduce_sum(y))
        },
        &params,
        1e-5,
        None,
    )
    .unwrap();
    report.max_rel_error
}

const TOL: f64 = 1e-4;

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matmul_family(seed in any::<u64>(), r in 1usize..4, k in 1usize..4, c in 1usize..4) {
        prop_assert!(check(seed, &[(r, k), (k, c)], |t, v| t.matmul(v[0], v[1])) <= TOL);
        prop_assert!(check(seed, &[(r, k), (c, k)], |t, v| t.matmul_nt(v[0], v[1])) <= TOL);
    }

    #[test]
    fn elementwise_binary(seed in any::<u64>(), r in 1usize..4, c in 1usize..4) {
        prop_assert!(check(seed, &[(r, c), (r, c)], |t, v| t.add(v[0], v[1])) <= TOL);
        prop_assert!(check(seed, &[(r, c), (r, c)], |t, v| t.sub(v[0], v[1])) <= TOL);
        prop_assert!(check(seed, &[(r, c), (r, c)], |t, v| t.mul(v[0], v[1])) <= TOL);
        prop_assert!(check(seed, &[(r, c), (1, c)], |t, v| t.add_row(v[0], v[1])) <= TOL);
        prop_assert!(check(seed, &[(r, c), (r, 1)], |t, v| t.scale_rows(v[0], v[1])) <= TOL);
    }

    #[test]
    fn elementwise_unary(seed in any::<u64>(), r in 1usize..4, c in 1usize..4) {
        prop_assert!(check(seed, &[(r, c)], |t, v| Ok(t.scale(v[0], -1.7))) <= TOL);
        prop_assert!(check(seed, &[(r, c)], |t, v| Ok(t.tanh(v[0]))) <= TOL);
        prop_assert!(check(seed, &[(r, c)], |t, v| Ok(t.sigmoid(v[0]))) <= TOL);
    }

    #[test]
    fn row_normalizers(seed in any::<u64>(), r in 1usize..4, c in 2usize..6) {
        prop_assert!(check(seed, &[(r, c)], |t, v| Ok(t.softmax(v[0]))) <= TOL);
        prop_assert!(check(seed, &[(r, c)], |t, v| Ok(t.log_softmax(v[0]))) <= TOL);
    }

    #[test]
    fn reductions_and_layout(seed in any::<u64>(), r in 1usize..4, c in 2usize..5) {
        prop_assert!(check(seed, &[(r, c)], |t, v| Ok(t.reduce_sum(v[0]))) <= TOL);
        prop_assert!(check(seed, &[(r, c)], |t, v| Ok(t.row_sum(v[0]))) <= TOL);
        prop_assert!(check(seed, &[(r, c), (r, 1)], |t, v| t.concat(&[v[0], v[1], v[0]])) <= TOL);
        prop_assert!(check(seed, &[(r, c)], |t, v| t.slice(v[0], 1, c - 1)) <= TOL);
        prop_assert!(check(seed, &[(4, c)], |t, v| t.gather_rows(v[0], &[3, 0, 3, 1])) <= TOL);
    }
}

#[test]
fn stop_gradient_passes_values_only() {
    let mut t = Tape::new();
    let x = t.param(Tensor::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
    let s = t.stop_gradient(x);
    assert_eq!(t.value(s), t.value(x));
    let y = t.mul(s, s).unwrap();
    let z = t.reduce_sum(y);
    let g = t.backward(z).unwrap();
    assert!(g.grad_or_zeros(&t, x).data().iter().all(|&v| v.to_bits() == 0));
}
