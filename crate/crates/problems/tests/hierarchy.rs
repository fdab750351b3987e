use rmntr::linalg::dot;
use rmntr::{SmoothObjective, TransferOperator};
use rmntr_problems::{
    Benchmark, BurgersConfig, BurgersProblem, PinnCoarseModel, PinnConfig, PinnProblem, QuadraticConfig,
    QuadraticProblem, SemilinearConfig, SemilinearProblem,
};

fn benches() -> Vec<(&'static str, Box<dyn Benchmark>)> {
    vec![
        ("burgers", Box::new(BurgersProblem::new(BurgersConfig { n: 64, ..BurgersConfig::default() }).unwrap())),
        ("semilinear", Box::new(SemilinearProblem::new(SemilinearConfig { n: 16, ..SemilinearConfig::default() }).unwrap())),
        ("pinn", Box::new(PinnProblem::new(PinnConfig { hidden: 8, grid: 8, ..PinnConfig::default() }).unwrap())),
        ("quadratic", Box::new(QuadraticProblem::new(QuadraticConfig { n: 16, ..QuadraticConfig::default() }).unwrap())),
    ]
}

#[test]
fn transfers_chain_between_level_dimensions() {
    for (name, b) in benches() {
        let levels = b.max_levels().min(3);
        assert!(levels >= 2, "{name}");
        let stack = b.level_stack(levels).unwrap();
        let t: &[TransferOperator] = stack.transfers();
        assert_eq!(t.last().unwrap().n_fine(), b.dim(), "{name}");
        for w in t.windows(2) {
            assert_eq!(w[0].n_fine(), w[1].n_coarse(), "{name}");
        }
        for r in t {
            assert!(r.gram_deviation() <= 1e-12);
        }
    }
}

#[test]
fn too_many_levels_is_an_error() {
    for (_, b) in benches() {
        assert!(b.level_stack(b.max_levels() + 1).is_err());
        assert!(b.level_stack(0).is_err());
    }
}

#[test]
fn coarse_objectives_are_finite_at_restricted_points() {
    for (name, b) in benches() {
        let levels = b.max_levels().min(3);
        let x = b.initial_point();
        let mut coarse_x = vec![x.clone()];
        let transfers: Vec<_> = (0..levels - 1).map(|l| b.transfer(l, levels).unwrap()).collect();
        for r in transfers.iter().rev() {
            let y = r.restrict(coarse_x.last().unwrap()).unwrap();
            coarse_x.push(y);
        }
        coarse_x.reverse();
        for (level, y) in coarse_x.iter().enumerate() {
            let mut obj = b.level_objective(level, levels).unwrap();
            assert_eq!(obj.dim(), y.len(), "{name} level {level}");
            assert!(obj.value(y).unwrap().is_finite(), "{name} level {level}");
            let g = obj.gradient(y).unwrap();
            assert!(g.iter().all(|v| v.is_finite()), "{name} level {level}");
        }
    }
}

#[test]
fn anchored_pinn_levels_agree_with_the_fine_level_after_recentering() {
    let p = PinnProblem::new(PinnConfig { hidden: 8, grid: 8, ..PinnConfig::default() }).unwrap();
    assert_eq!(p.config().coarse_model, PinnCoarseModel::Anchored);
    let mut stack = p.level_stack(3).unwrap();
    let t = stack.transfers().to_vec();
    let x = p.initial_point();
    let f = stack.finest_mut().value(&x).unwrap();

    let mut fine = p.level_objective(2, 3).unwrap();
    assert!((fine.value(&x).unwrap() - f).abs() < 1e-14);

    // Walk down the way the solver does: recenter, then evaluate at R x.
    let mut objs = stack.into_objectives();
    let y1 = t[1].restrict(&x).unwrap();
    objs[1].recenter(&x).unwrap();
    assert!((objs[1].value(&y1).unwrap() - f).abs() < 1e-12);
    let y0 = t[0].restrict(&y1).unwrap();
    objs[0].recenter(&y1).unwrap();
    assert!((objs[0].value(&y0).unwrap() - f).abs() < 1e-12);

    // Gradient of the coarsest level is the restricted fine gradient.
    let g = fine.gradient(&x).unwrap();
    let g0 = objs[0].gradient(&y0).unwrap();
    let expect = t[0].restrict(&t[1].restrict(&g).unwrap()).unwrap();
    let err = g0.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-12 * (1.0 + dot(&g, &g).sqrt()));
}

#[test]
fn merged_pinn_levels_are_narrower_networks() {
    let cfg = PinnConfig { hidden: 8, grid: 8, coarse_model: PinnCoarseModel::Merged, ..PinnConfig::default() };
    let p = PinnProblem::new(cfg).unwrap();
    let stack = p.level_stack(2).unwrap();
    assert_eq!(stack.transfers()[0].n_coarse(), 16);
}
