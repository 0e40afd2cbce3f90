use neusort::adgraph::Tape;
use neusort::permops::{
    argsort, gt_permutation, is_doubly_stochastic, is_hard_permutation, split_hard_permutation,
};
use neusort::sortnet::execute;
use neusort::swap::{hard_swap, soft_swap_values};
use neusort::{SigmoidKind, SigmoidSpec, SwapMode, Tensor64, WirePlan};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = SigmoidKind> {
    prop::sample::select(SigmoidKind::SUPPORTED.to_vec())
}

fn values(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![(-3i32..=3).prop_map(f64::from), -10.0..10.0f64],
        1..=max,
    )
}

fn run(v: &[f64], spec: &SigmoidSpec<f64>, mode: SwapMode) -> (Vec<f64>, Tensor64) {
    let plan = WirePlan::odd_even(v.len()).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor64::vector(v.to_vec()));
    let (out, p) = execute(&mut tape, &plan, x, spec, mode).unwrap();
    (tape.value(out).data().to_vec(), p.values(&tape).clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn error_free_output_is_sorted_input(v in values(20), k in kind(), beta in 0.05..50.0f64) {
        let spec = SigmoidSpec::new(k, beta).unwrap();
        let (out, p) = run(&v, &spec, SwapMode::ErrorFree);
        let mut oracle = v.clone();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(out, oracle);
        prop_assert!(is_hard_permutation(&p));
    }

    #[test]
    fn soft_composition_is_doubly_stochastic(v in values(20), k in kind(), beta in 0.05..50.0f64) {
        let spec = SigmoidSpec::new(k, beta).unwrap();
        let (out, p) = run(&v, &spec, SwapMode::Soft);
        prop_assert!(is_doubly_stochastic(&p, 1e-9));
        let applied = p.transpose().matmul(&Tensor64::vector(v.clone())).unwrap();
        for (a, b) in applied.data().iter().zip(&out) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn soft_swap_preserves_sum_and_order(x in -50.0..50.0f64, y in -50.0..50.0f64, k in kind(), beta in 0.05..50.0f64) {
        let spec = SigmoidSpec::new(k, beta).unwrap();
        let (lo, hi) = soft_swap_values(x, y, &spec);
        prop_assert!((lo + hi - (x + y)).abs() < 1e-9);
        prop_assert!(lo <= hi + 1e-12);
        prop_assert!(lo >= x.min(y) - 1e-12 && hi <= x.max(y) + 1e-12);
        prop_assert_eq!(hard_swap(x, y), (x.min(y), x.max(y)));
    }

    #[test]
    fn sigmoid_is_symmetric(x in -100.0..100.0f64, k in kind(), beta in 0.05..50.0f64) {
        use neusort::adgraph::Pointwise;
        let spec = SigmoidSpec::new(k, beta).unwrap();
        let (a, b) = (spec.value(x), spec.value(-x));
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn argsort_is_stable_and_sorting(v in values(30)) {
        let idx = argsort(&v);
        for w in idx.indices().windows(2) {
            prop_assert!(v[w[0]] < v[w[1]] || (v[w[0]] == v[w[1]] && w[0] < w[1]));
        }
    }

    #[test]
    fn split_blocks_are_permutations(v in values(30), cut in 0.0..1.0f64) {
        let n = v.len();
        let n1 = ((n as f64) * cut) as usize;
        let p = gt_permutation(&v).perm;
        let (a, b) = split_hard_permutation(&p, n1, n - n1).unwrap();
        prop_assert_eq!((a.rows(), b.rows()), (n1, n - n1));
        if n1 > 0 { prop_assert!(is_hard_permutation(&a)); }
        if n1 < n { prop_assert!(is_hard_permutation(&b)); }
    }
}
