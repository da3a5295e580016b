use lrdyn::dynamics::{cocycle_defect, default_grid, derivation, propagate, Propagator, TimeGrid};
use lrdyn::fock::{FockOperator, LocalOperator, ModeSpace};
use lrdyn::hamiltonians::{HamiltonianFamily, Schedule, TimeDependentModel};
use lrdyn::interactions::build_bcs_model;
use lrdyn::lattice::{CubicBox, Site, SiteSet};
use lrdyn::C64;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn space(radius: usize) -> ModeSpace {
    ModeSpace::new(CubicBox::new(1, radius).unwrap(), 2).unwrap()
}

fn ramped_bcs(sp: &ModeSpace) -> HamiltonianFamily {
    let m = build_bcs_model(1, 1.0, 0.5, Some(0.6), &Default::default()).unwrap();
    let mut tdm = TimeDependentModel::autonomous(&m);
    tdm.atoms[0].1 = Schedule::Sinusoidal {
        offset: 1.0,
        amplitude: 0.5,
        omega: 3.0,
        phase: 0.2,
    };
    tdm.short[0].1 = Schedule::LinearRamp {
        from: 0.5,
        to: 1.5,
        t0: 0.0,
        t1: 2.0,
    };
    HamiltonianFamily::from_model(&tdm, sp).unwrap()
}

fn random_local(sp: &ModeSpace, sites: &[i64], seed: u64) -> FockOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set = SiteSet::new(sites.iter().map(|x| Site(vec![*x])));
    LocalOperator::random(set, 2, false, &mut rng)
        .unwrap()
        .embed(sp)
        .unwrap()
}

fn fine(h: &HamiltonianFamily, s: f64, t: f64) -> Propagator {
    propagate(h, &TimeGrid::new(s, t, 8).unwrap()).unwrap()
}

#[test]
fn autonomous_evolution_matches_eigendecomposition() {
    let sp = space(1);
    let m = build_bcs_model(1, 1.0, 0.5, Some(0.7), &Default::default()).unwrap();
    let fam = HamiltonianFamily::from_model(&TimeDependentModel::autonomous(&m), &sp).unwrap();
    let h = fam.operator_at(0.0).to_dense().unwrap();
    let eig = h.symmetric_eigen();
    let a = sp.annihilator(&Site(vec![0]), 0).unwrap();
    for t in [0.3, 1.0, 2.0] {
        let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| (C64::new(0.0, t) * e).exp()));
        let u = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();
        let want = &u * a.to_dense().unwrap() * u.adjoint();
        let got = propagate(&fam, &default_grid(&fam, 0.0, t).unwrap())
            .unwrap()
            .heisenberg(&a)
            .unwrap()
            .to_dense()
            .unwrap();
        let err = lrdyn::linalg::spectral_norm_dense(&(got - want));
        assert!(err < 1e-8, "t = {t}: {err:e}");
    }
}

#[test]
fn cauchy_problems_by_finite_differences() {
    let sp = space(1);
    let fam = ramped_bcs(&sp);
    let a = random_local(&sp, &[0], 11);
    let (s, t, h) = (0.2, 0.9, 1e-4);
    let base = propagate(&fam, &default_grid(&fam, s, t).unwrap()).unwrap();
    let tau = base.heisenberg(&a).unwrap();

    // ∂_t τ_{t,s}(A) = τ_{t,s}(δ^{m(t)}(A))
    let plus = base.then(&fine(&fam, t, t + h)).heisenberg(&a).unwrap();
    let minus = base.then(&fine(&fam, t, t - h)).heisenberg(&a).unwrap();
    let fd = plus.sub(&minus).scale(C64::new(0.5 / h, 0.0));
    let exact = base.heisenberg(&derivation(&fam.operator_at(t), &a)).unwrap();
    let rel = fd.sub(&exact).norm() / exact.norm();
    assert!(rel < 1e-4, "first equation: {rel:e}");

    // ∂_s τ_{t,s}(A) = −δ^{m(s)}(τ_{t,s}(A))
    let plus = fine(&fam, s + h, s).then(&base).heisenberg(&a).unwrap();
    let minus = fine(&fam, s - h, s).then(&base).heisenberg(&a).unwrap();
    let fd = plus.sub(&minus).scale(C64::new(0.5 / h, 0.0));
    let exact = derivation(&fam.operator_at(s), &tau).scale(C64::new(-1.0, 0.0));
    let rel = fd.sub(&exact).norm() / exact.norm();
    assert!(rel < 1e-4, "second equation: {rel:e}");
}

#[test]
fn step_halving_shows_fourth_order() {
    let sp = space(1);
    let fam = ramped_bcs(&sp);
    let a = random_local(&sp, &[-1, 0], 3);
    let run = |n: usize| {
        propagate(&fam, &TimeGrid::new(0.0, 1.0, n).unwrap())
            .unwrap()
            .heisenberg(&a)
            .unwrap()
    };
    let (r1, r2, r3) = (run(4), run(8), run(16));
    let e1 = r1.sub(&r2).norm();
    let e2 = r2.sub(&r3).norm();
    assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
}

#[test]
fn heisenberg_is_a_star_automorphism() {
    let sp = space(1);
    let fam = ramped_bcs(&sp);
    let p = propagate(&fam, &default_grid(&fam, 0.0, 1.3).unwrap()).unwrap();
    assert!(p.info.unitarity_defect <= 1e-9);
    let a = random_local(&sp, &[0, 1], 5);
    let b = random_local(&sp, &[-1], 6);
    let ta = p.heisenberg(&a).unwrap();
    let tb = p.heisenberg(&b).unwrap();
    assert!(p.heisenberg(&a.mul(&b)).unwrap().sub(&ta.mul(&tb)).norm() < 1e-9);
    assert!(p.heisenberg(&a.adjoint()).unwrap().sub(&ta.adjoint()).norm() < 1e-9);
    assert!(p.heisenberg(&sp.identity()).unwrap().sub(&sp.identity()).norm() < 1e-9);
    assert!((ta.norm() - a.norm()).abs() < 1e-9);
}

#[test]
fn cocycle_end_points_are_exact() {
    let sp = space(0);
    let fam = ramped_bcs(&sp);
    let a = random_local(&sp, &[0], 8);
    assert!(cocycle_defect(&fam, 0.0, 0.0, 1.0, &a).unwrap() < 1e-14);
    assert!(cocycle_defect(&fam, 0.0, 1.0, 1.0, &a).unwrap() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reverse_cocycle(s in 0.0f64..2.0, r in 0.0f64..2.0, t in 0.0f64..2.0, seed in 0u64..1000) {
        let sp = space(1);
        let fam = ramped_bcs(&sp);
        let a = random_local(&sp, &[0], seed);
        prop_assert!(cocycle_defect(&fam, s, r, t, &a).unwrap() <= 1e-7);
    }
}
