use bgs_core::bgs::{self, select_indices, SolverConfig};
use bgs_core::math::{dot, norm};
use bgs_core::problems::{gradient, WithGradientMode};
use bgs_core::qp::{solve_simplex_qp, SimplexQpInstance, DEFAULT_TOL};
use bgs_core::{make_problem, GradientMode, Objective, Problem, ProblemId, StepKind};
use proptest::prelude::*;

fn instance(max_atoms: usize, max_dim: usize) -> impl Strategy<Value = SimplexQpInstance> {
    (1..=max_atoms, 1..=max_dim).prop_flat_map(|(p, n)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, n), p),
            prop::collection::vec(0.0..2.0f64, p),
            prop::sample::select(vec![0.1, 1.0, 10.0]),
        )
            .prop_map(|(a, e, c)| SimplexQpInstance::new(a, e, c))
    })
}

fn all_problems() -> Vec<Problem> {
    (1..=13)
        .map(|k| {
            let id = ProblemId::from_number(k).unwrap();
            Problem::new(id, id.fixed_dim().unwrap_or(7)).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn qp_solution_is_on_simplex(inst in instance(8, 6)) {
        let s = solve_simplex_qp(&inst, DEFAULT_TOL).unwrap();
        let sum: f64 = s.lambda.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(s.lambda.iter().all(|l| *l >= 0.0));
        prop_assert!(s.kkt_residual <= DEFAULT_TOL);
    }

    #[test]
    fn qp_no_better_simplex_point_nearby(inst in instance(6, 5), i in 0usize..6, j in 0usize..6) {
        let s = solve_simplex_qp(&inst, DEFAULT_TOL).unwrap();
        let p = inst.len();
        let (i, j) = (i % p, j % p);
        let base = inst.objective(&s.lambda);
        // Move weight from atom j to atom i.
        let t = 1e-4f64.min(s.lambda[j]);
        let mut l = s.lambda.clone();
        l[i] += t;
        l[j] -= t;
        prop_assert!(inst.objective(&l) >= base - 1e-8);
    }

    #[test]
    fn qp_not_worse_than_any_vertex(inst in instance(8, 6)) {
        let s = solve_simplex_qp(&inst, DEFAULT_TOL).unwrap();
        let obj = inst.objective(&s.lambda);
        for k in 0..inst.len() {
            let mut v = vec![0.0; inst.len()];
            v[k] = 1.0;
            prop_assert!(obj <= inst.objective(&v) + 1e-12);
        }
    }

    #[test]
    fn qp_reported_values_are_consistent(inst in instance(8, 6)) {
        let s = solve_simplex_qp(&inst, DEFAULT_TOL).unwrap();
        let mut g = vec![0.0; inst.dim()];
        for (l, a) in s.lambda.iter().zip(&inst.atoms) {
            for (o, v) in g.iter_mut().zip(a) {
                *o += l * v;
            }
        }
        let e = dot(&s.lambda, &inst.errors);
        prop_assert!(norm(&g.iter().zip(&s.g_tilde).map(|(a, b)| a - b).collect::<Vec<_>>()) <= 1e-12 * (1.0 + norm(&g)));
        prop_assert!((e - s.e_tilde).abs() <= 1e-12 * (1.0 + e));
        prop_assert!((s.w - inst.objective(&s.lambda)).abs() <= 1e-10 * (1.0 + s.w.abs()));
    }

    #[test]
    fn qp_duplicate_atom_keeps_optimum(inst in instance(5, 4), k in 0usize..5) {
        let k = k % inst.len();
        let base = solve_simplex_qp(&inst, DEFAULT_TOL).unwrap();
        let mut dup = inst.clone();
        dup.atoms.push(inst.atoms[k].clone());
        dup.errors.push(inst.errors[k]);
        let s = solve_simplex_qp(&dup, DEFAULT_TOL).unwrap();
        prop_assert!((s.w - base.w).abs() <= 1e-9 * (1.0 + base.w.abs()));
    }

    #[test]
    fn qp_zero_errors_ignore_scale(atoms in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 1..6)) {
        let p = atoms.len();
        let a = solve_simplex_qp(&SimplexQpInstance::new(atoms.clone(), vec![0.0; p], 0.1), DEFAULT_TOL).unwrap();
        let b = solve_simplex_qp(&SimplexQpInstance::new(atoms, vec![0.0; p], 10.0), DEFAULT_TOL).unwrap();
        prop_assert!((a.w - b.w).abs() <= 1e-10 * (1.0 + a.w));
    }

    #[test]
    fn selection_keeps_forced_and_respects_theta(
        raw in prop::collection::vec(0.0..1.0f64, 1..10),
        theta in 0.0..=1.0f64,
    ) {
        let weights: Vec<(usize, f64)> = raw.iter().copied().enumerate().map(|(j, w)| (j + 1, w)).collect();
        let forced = [0, 100];
        let kept = select_indices(&weights, theta, &forced);
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        for f in forced {
            prop_assert!(kept.contains(&f));
        }
        let total: f64 = raw.iter().sum();
        let selected: f64 = weights.iter().filter(|(j, _)| kept.contains(j)).map(|w| w.1).sum();
        if total > 0.0 {
            prop_assert!(selected / total <= theta * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn selection_theta_one_keeps_everything(raw in prop::collection::vec(0.01..1.0f64, 1..10)) {
        let weights: Vec<(usize, f64)> = raw.iter().copied().enumerate().collect();
        let kept = select_indices(&weights, 1.0, &[]);
        prop_assert_eq!(kept.len(), raw.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn problems_are_convex(k in 1usize..=13, seed in any::<u64>()) {
        let id = ProblemId::from_number(k).unwrap();
        let p = Problem::new(id, id.fixed_dim().unwrap_or(6)).unwrap();
        let n = p.dim();
        let mut r = seed;
        let mut next = || {
            r = r.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((r >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0
        };
        let x: Vec<f64> = (0..n).map(|_| next()).collect();
        let y: Vec<f64> = (0..n).map(|_| next()).collect();
        let g = gradient(&p, GradientMode::Exact, &x).unwrap();
        let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let lin = p.value(&x) + dot(&g, &diff);
        prop_assert!(p.value(&y) >= lin - 1e-9 * (1.0 + lin.abs()), "{} at {:?}", p.name(), x);
    }

    #[test]
    fn gradients_match_finite_differences(k in 1usize..=13, seed in any::<u64>()) {
        let id = ProblemId::from_number(k).unwrap();
        let p = Problem::new(id, id.fixed_dim().unwrap_or(6)).unwrap();
        let n = p.dim();
        let mut r = seed;
        let mut next = || {
            r = r.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((r >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        let x: Vec<f64> = (0..n).map(|_| next()).collect();
        let exact = gradient(&p, GradientMode::Exact, &x).unwrap();
        let fd = gradient(&p, GradientMode::ForwardDifference { h: 1e-7 }, &x).unwrap();
        let err = norm(&exact.iter().zip(&fd).map(|(a, b)| a - b).collect::<Vec<_>>());
        prop_assert!(err <= 1e-4 * (1.0 + norm(&exact)), "{} err {err:e}", p.name());
    }
}

#[test]
fn minimizers_attain_optimal_values() {
    for p in all_problems() {
        let x = p.minimizer();
        assert!((p.value(&x) - p.f_star()).abs() <= 1e-10 * (1.0 + p.f_star().abs()), "{}", p.name());
    }
}

#[test]
fn scalable_minimizers_attain_optimal_values_at_several_sizes() {
    for k in 1..=13 {
        let id = ProblemId::from_number(k).unwrap();
        if !id.is_scalable() {
            continue;
        }
        for n in [2, 3, 10, 50] {
            let p = Problem::new(id, n).unwrap();
            let x = p.minimizer();
            assert!((p.value(&x) - p.f_star()).abs() <= 1e-10 * (1.0 + p.f_star().abs()), "{} n={n}", p.name());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solver_invariants(k in prop::sample::select(vec![1usize, 3, 5, 6, 9, 10, 11]), seed in 0u64..1000) {
        let id = ProblemId::from_number(k).unwrap();
        let n = id.fixed_dim().unwrap_or(8);
        let p = Problem::new(id, n).unwrap();
        let mut c = SolverConfig::for_dim(n);
        c.seed = seed;
        c.max_outer = 60;
        let r = bgs::run(&p, &c, p.x0()).unwrap();

        let mut f_prev = p.value(p.x0());
        let mut radius_prev = c.eps0;
        let mut evals_prev = 0;
        for t in &r.trace {
            prop_assert!(t.radius <= radius_prev);
            prop_assert!(t.grad_evals_cum >= evals_prev);
            if t.kind == StepKind::SeriousStep {
                prop_assert!(t.f_val < f_prev);
            } else {
                prop_assert!(t.f_val == f_prev);
            }
            f_prev = t.f_val;
            radius_prev = t.radius;
            evals_prev = t.grad_evals_cum;
        }
        prop_assert_eq!(r.f, f_prev);
        prop_assert_eq!(r.grad_evals, evals_prev);

        let again = bgs::run(&p, &c, p.x0()).unwrap();
        prop_assert_eq!(again.x, r.x);
        prop_assert_eq!(again.trace, r.trace);
    }

    #[test]
    fn forward_difference_runs_stay_finite(seed in 0u64..1000) {
        let p = make_problem("Rosen", 4).unwrap();
        let oracle = WithGradientMode::new(&p, GradientMode::ForwardDifference { h: 1e-9 }).unwrap();
        let mut c = SolverConfig::for_dim(4);
        c.seed = seed;
        c.max_outer = 20;
        let r = bgs::run(&oracle, &c, p.x0()).unwrap();
        prop_assert!(r.f.is_finite());
        prop_assert!(r.f <= p.value(p.x0()));
    }
}
