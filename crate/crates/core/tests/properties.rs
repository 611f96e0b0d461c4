use std::collections::HashSet;

use metaforge::dsl::{parse, BinaryOp, Expr, RewardExpr, DIV_EPSILON};
use metaforge::grpo::{compute_advantages, TrainingConfig};
use metaforge::inner::{Init, InnerRunResult, InnerRunSpec, TaskConfig};
use metaforge::orchestrator::dispatch_with;
use metaforge::primitives::{math_primitives, thirds_bounds, tokenize, trajectory_primitives, MathContext, TextOutput, TrajectoryOutput};
use metaforge::seed;
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (1usize..=4).prop_map(Expr::prim),
        prop_oneof![
            prop::sample::select(vec![0.0, 0.05, 0.1, 0.5, 1.0, 2.0, 3.0, 10.0]),
            0.0..1e6f64,
            1e-9..1e-3f64,
        ]
        .prop_map(Expr::constant),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(6, 64, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::neg),
            (prop::sample::select(BinaryOp::ALL.to_vec()), inner.clone(), inner).prop_map(|(op, l, r)| Expr::binary(op, l, r)),
        ]
    })
}

/// Plain recursive evaluation; `None` where a guarded operation is hit.
fn reference(node: &Expr, g: &[f64; 4]) -> Option<f64> {
    Some(match node {
        Expr::Primitive(k) => g[k - 1],
        Expr::Constant(c) => *c,
        Expr::Neg(c) => -reference(c, g)?,
        Expr::Binary(op, l, r) => {
            let (a, b) = (reference(l, g)?, reference(r, g)?);
            match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div if b.abs() < DIV_EPSILON => return None,
                BinaryOp::Div => a / b,
                BinaryOp::Pow if a < 0.0 && b.fract() != 0.0 => return None,
                BinaryOp::Pow if a.abs() < DIV_EPSILON && b < 0.0 => return None,
                BinaryOp::Pow => a.powf(b),
            }
        }
    })
    .filter(|v| v.is_finite())
}

fn unit_point() -> impl Strategy<Value = [f64; 4]> {
    [0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn print_parse_roundtrip(e in expr()) {
        let e = RewardExpr::new(e);
        let text = e.to_text();
        let back = parse(&text).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
        prop_assert_eq!(back, e);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn evaluator_matches_reference(e in expr(), g in unit_point()) {
        let got = RewardExpr::new(e.clone()).evaluate(&g);
        match reference(&e, &g) {
            Some(v) => prop_assert_eq!(got.map(f64::to_bits), Ok(v.to_bits())),
            None => prop_assert!(got.is_err(), "expected an error, got {:?}", got),
        }
    }

    #[test]
    fn classifier_is_total(e in expr()) {
        let e = RewardExpr::new(e);
        let class = e.classify();
        prop_assert_eq!(parse(&e.to_text()).unwrap().classify(), class);
    }

    #[test]
    fn trajectory_primitives_are_normalized(rewards in prop::collection::vec(0u8..=1, 0..40), success: bool) {
        let g = trajectory_primitives::<f64>(&TrajectoryOutput::from_rewards(&rewards, success));
        prop_assert_eq!(g.len(), 4);
        prop_assert!(g.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(g.as_slice()[0], f64::from(u8::from(success)));
    }

    #[test]
    fn thirds_partition_the_trajectory(rewards in prop::collection::vec(0u8..=1, 0..60)) {
        let n = rewards.len();
        let (a, b) = thirds_bounds(n);
        prop_assert!(a <= b && b <= n);
        // segments differ in length by at most one, longest first
        let lens = [a, b - a, n - b];
        prop_assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        prop_assert!(lens[0] >= lens[1] && lens[1] >= lens[2]);
        let g = trajectory_primitives::<f64>(&TrajectoryOutput::from_rewards(&rewards, false));
        let total: f64 = rewards.iter().map(|&r| f64::from(r)).sum();
        let weighted: f64 = g.as_slice()[1..].iter().zip(lens).map(|(m, l)| m * l as f64).sum();
        prop_assert!((weighted - total).abs() < 1e-9);
        if n % 3 == 0 && n > 0 {
            let k = n / 3;
            for (i, chunk) in rewards.chunks(k).enumerate() {
                let m = chunk.iter().map(|&r| f64::from(r)).sum::<f64>() / k as f64;
                prop_assert_eq!(g.as_slice()[i + 1], m);
            }
        }
    }

    #[test]
    fn math_primitives_are_flags(
        words in prop::collection::vec(prop::sample::select(vec!["1", "2", "step", "then", "boxed{", "}", "x"]), 0..12),
        truth in prop::collection::vec(prop::sample::select(vec!["1", "2"]), 1..3),
    ) {
        let out = TextOutput { tokens: tokenize(&words.join(" ")) };
        let ctx = MathContext { question: vec![], ground_truth: truth.iter().map(|s| s.to_string()).collect() };
        let g = math_primitives::<f64>(&out, &ctx);
        prop_assert!(g.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
        // an exact boxed answer implies the format and soft-outcome checks
        if g.as_slice()[0] == 1.0 {
            prop_assert_eq!(g.as_slice()[1], 1.0);
            prop_assert_eq!(g.as_slice()[3], 1.0);
        }
    }

    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(-10.0..10.0f64, 2..32)) {
        let adv = compute_advantages(&rewards).unwrap();
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        if adv.iter().any(|&a| a != 0.0) {
            prop_assert!(mean.abs() < 1e-9, "mean {}", mean);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-9, "std {}", var.sqrt());
        }
    }

    #[test]
    fn advantages_preserve_order(rewards in prop::collection::vec(0.0..1.0f64, 2..16)) {
        let adv = compute_advantages(&rewards).unwrap();
        for i in 0..rewards.len() {
            for j in 0..rewards.len() {
                if rewards[i] < rewards[j] {
                    prop_assert!(adv[i] <= adv[j]);
                }
            }
        }
    }

    #[test]
    fn dispatch_keeps_input_order(n in 0usize..24, parallelism in 1usize..9) {
        let specs: Vec<InnerRunSpec> = (0..n)
            .map(|i| InnerRunSpec {
                expr: format!("g{}", i % 4 + 1),
                init: Init::Scratch,
                budget_steps: 1,
                task: TaskConfig::default(),
                training: TrainingConfig { seed: i as u64, ..TrainingConfig::default() },
            })
            .collect();
        let results = dispatch_with(&specs, parallelism, |s| {
            let mut r = InnerRunResult::invalid(&s.expr, "stub");
            r.steps_used = s.training.seed as usize;
            r
        });
        prop_assert_eq!(results.len(), n);
        for (i, (r, _)) in results.iter().enumerate() {
            prop_assert_eq!(r.steps_used, i);
            prop_assert_eq!(&r.expr, &specs[i].expr);
        }
    }

    #[test]
    fn derived_seeds_do_not_collide(master: u64) {
        let mut seen = HashSet::new();
        for step in 0..16 {
            prop_assert!(seen.insert(seed::meta_seed(master, step)));
            for i in 0..16 {
                prop_assert!(seen.insert(seed::rollout_seed(master, step, i)));
            }
        }
    }
}
