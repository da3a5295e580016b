//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion does.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::pseudospin::pair_amplitude;
use lrdyn::dynamics::{cocycle_defect, default_grid, derivation, propagate, TimeGrid, INTEGRATOR_TOL};
use lrdyn::experiment::{execute, parse_config, preset, presets, ExperimentConfig};
use lrdyn::fock::{FockOperator, LocalOperator, ModeSpace};
use lrdyn::hamiltonians::{HamiltonianFamily, Schedule, TimeDependentModel};
use lrdyn::interactions::{build_bcs_model, encode_matrix, Interaction};
use lrdyn::lattice::{CubicBox, DecayFunction, PeriodVector, Site, SiteSet};
use lrdyn::meanfield::{effective_matrix_element, solve_self_consistency, SolverConfig};
use lrdyn::states::{
    coarse_grain, ergodicity_defect, evolve_mixture, product_state, CellSpec, CellState, LatticeState, Mixture,
    StateRepr, StateTag,
};
use lrdyn::verify::{
    check_approximating_bound, check_energy_density_bound, check_local_energy_bound, check_long_range_energy_bound,
    energy_density_convergence, lr_bound_check, main_convergence, mixture_convergence, random_long_range_model,
    random_time_dependent_model,
};
use lrdyn::C64;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(clock: Instant, budget: Duration, what: &str) -> std::result::Result<(), String> {
    let took = clock.elapsed();
    ensure(took < budget, format!("{what} took {took:?}, budget {budget:?}"))
}

fn space(dim: usize, l: usize, spins: usize) -> ModeSpace {
    ModeSpace::new(CubicBox::new(dim, l).unwrap(), spins).unwrap()
}

fn site(x: i64) -> Site {
    Site(vec![x])
}

fn pairing() -> LocalOperator {
    let o = site(0);
    let set = SiteSet::singleton(o.clone());
    LocalOperator::annihilator(&set, 2, &o, 1)
        .unwrap()
        .mul(&LocalOperator::annihilator(&set, 2, &o, 0).unwrap())
}

fn unit() -> LocalOperator {
    LocalOperator::identity(SiteSet::singleton(site(0)), 2).unwrap()
}

fn coherent(theta: f64, phase: f64) -> CellState {
    CellState::from_spec(&CellSpec::BcsCoherent { theta, phase }, &PeriodVector::ones(1), 2).unwrap()
}

fn preset_config(name: &str) -> ExperimentConfig {
    parse_config(preset(name).unwrap().toml).unwrap()
}

fn car_defect(sp: &ModeSpace) -> f64 {
    let modes: Vec<(Site, usize)> = sp
        .cube()
        .sites()
        .iter()
        .flat_map(|x| (0..sp.spins()).map(move |s| (x.clone(), s)))
        .collect();
    let ann: Vec<FockOperator> = modes.iter().map(|(x, s)| sp.annihilator(x, *s).unwrap()).collect();
    let cre: Vec<FockOperator> = ann.iter().map(|a| a.adjoint()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..ann.len() {
        for j in 0..ann.len() {
            let mut ac = ann[i].anticommutator(&cre[j]);
            if i == j {
                ac = ac.sub(&sp.identity());
            }
            worst = worst.max(ac.max_abs()).max(ann[i].anticommutator(&ann[j]).max_abs());
        }
    }
    worst
}

fn c1_car() -> Check {
    let clock = Instant::now();
    let boxes = [(1, 5, 1), (1, 2, 2), (2, 1, 1), (3, 0, 2)];
    let mut worst: f64 = 0.0;
    for (dim, l, spins) in boxes {
        let sp = space(dim, l, spins);
        ensure(sp.modes() <= 12, "box too large")?;
        worst = worst.max(car_defect(&sp));
    }
    ensure(worst <= 1e-12, format!("max defect {worst:e}"))?;
    within(clock, Duration::from_secs(10), "CAR checks")?;
    Ok(format!("max defect {worst:e} on {} boxes up to 11 modes", boxes.len()))
}

fn c2_norm_bounds() -> Check {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for draw in 0..200 {
        let decay = if rng.gen_bool(0.5) {
            DecayFunction::Polynomial {
                power: rng.gen_range(2.0..5.0),
            }
        } else {
            DecayFunction::Exponential {
                kappa: rng.gen_range(0.2..2.0),
            }
        };
        let spins = rng.gen_range(1..=2);
        let l = if spins == 2 {
            rng.gen_range(0..=1)
        } else {
            rng.gen_range(0..=3)
        };
        let sp = space(1, l, spins);
        let range = if spins == 2 {
            rng.gen_range(0..=1)
        } else {
            rng.gen_range(0..=2)
        };
        let phi = Interaction::random_ti(1, spins, range, &mut rng).unwrap();
        let period = PeriodVector::new(vec![rng.gen_range(1..=2)]).unwrap();
        let m = random_long_range_model(1, spins, &decay, &mut rng).unwrap();
        let g: Vec<C64> = (0..3)
            .map(|_| C64::from_polar(rng.gen_range(0.0..1.0), rng.gen_range(0.0..6.3)))
            .collect();
        let checks = [
            check_local_energy_bound(&phi, &decay, &sp).unwrap(),
            check_energy_density_bound(&phi, &period, &decay, sp.cube()).unwrap(),
            check_long_range_energy_bound(&m, &decay, &sp).unwrap(),
            check_approximating_bound(&m, &g, &decay, &sp).unwrap(),
        ];
        for c in &checks {
            ensure(c.passes, format!("draw {draw}: {c:?}"))?;
            if c.rhs > 0.0 {
                worst = worst.max(c.lhs / c.rhs);
            }
        }
    }
    within(clock, Duration::from_secs(120), "norm suite")?;
    Ok(format!("800 checks over 200 draws; largest lhs/rhs {worst:.3}"))
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

fn c3_dynamics() -> Check {
    let sp = space(1, 1, 2);
    let fam = ramped_bcs(&sp);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random_a = |rng: &mut ChaCha8Rng| {
        LocalOperator::random(SiteSet::new(vec![site(0), site(1)]), 2, false, rng)
            .unwrap()
            .embed(&sp)
            .unwrap()
    };

    let mut cocycle: f64 = 0.0;
    for _ in 0..10 {
        let (s, r, t) = (
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.0..2.0),
        );
        let a = random_a(&mut rng);
        cocycle = cocycle.max(cocycle_defect(&fam, s, r, t, &a).unwrap());
    }
    ensure(cocycle <= 1e-7, format!("cocycle defect {cocycle:e}"))?;

    let a = random_a(&mut rng);
    let (s, t, h) = (0.2, 0.9, 1e-4);
    let fine = |x: f64, y: f64| propagate(&fam, &TimeGrid::new(x, y, 8).unwrap()).unwrap();
    let base = propagate(&fam, &default_grid(&fam, s, t).unwrap()).unwrap();
    let tau = base.heisenberg(&a).unwrap();
    let fd = base
        .then(&fine(t, t + h))
        .heisenberg(&a)
        .unwrap()
        .sub(&base.then(&fine(t, t - h)).heisenberg(&a).unwrap())
        .scale(C64::new(0.5 / h, 0.0));
    let exact = base.heisenberg(&derivation(&fam.operator_at(t), &a)).unwrap();
    let first = fd.sub(&exact).norm() / exact.norm();
    let fd = fine(s + h, s)
        .then(&base)
        .heisenberg(&a)
        .unwrap()
        .sub(&fine(s - h, s).then(&base).heisenberg(&a).unwrap())
        .scale(C64::new(0.5 / h, 0.0));
    let exact = derivation(&fam.operator_at(s), &tau).scale(C64::new(-1.0, 0.0));
    let second = fd.sub(&exact).norm() / exact.norm();
    ensure(
        first <= 1e-4 && second <= 1e-4,
        format!("finite-difference residuals {first:e}, {second:e}"),
    )?;

    let mut eig_err: f64 = 0.0;
    for (l, hop) in [(1, 0.7), (0, 0.0)] {
        let sp = space(1, l, 2);
        let m = build_bcs_model(1, 1.0, 0.5, Some(hop), &Default::default()).unwrap();
        let fam = HamiltonianFamily::from_model(&TimeDependentModel::autonomous(&m), &sp).unwrap();
        let eig = fam.operator_at(0.0).to_dense().unwrap().symmetric_eigen();
        let a = sp.annihilator(&site(0), 0).unwrap();
        for t in [0.3, 1.0, 2.0] {
            let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| (C64::new(0.0, t) * e).exp()));
            let u = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();
            let want = &u * a.to_dense().unwrap() * u.adjoint();
            let got = propagate(&fam, &default_grid(&fam, 0.0, t).unwrap())
                .unwrap()
                .heisenberg(&a)
                .unwrap();
            eig_err = eig_err.max(lrdyn::linalg::spectral_norm_dense(&(got.to_dense().unwrap() - want)));
        }
    }
    ensure(eig_err <= 1e-8, format!("eigendecomposition mismatch {eig_err:e}"))?;
    Ok(format!(
        "cocycle {cocycle:.1e}; Cauchy residuals {first:.1e}, {second:.1e}; eigen oracle {eig_err:.1e}"
    ))
}

fn c4_lieb_robinson() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let decay = DecayFunction::default();
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let spins = rng.gen_range(1..=2);
        let l = if spins == 2 { 1 } else { rng.gen_range(1..=3) };
        let sp = space(1, l, spins);
        let m = random_time_dependent_model(1, spins, &decay, &mut rng).unwrap();
        let phi = Interaction::random_ti(1, spins, 1, &mut rng).unwrap();
        let a = LocalOperator::random(SiteSet::singleton(site(0)), spins, rng.gen_bool(0.5), &mut rng)
            .unwrap()
            .embed(&sp)
            .unwrap();
        let s = rng.gen_range(0.0..1.0);
        let t = s + rng.gen_range(0.0..1.0);
        let r = lr_bound_check(&m, &phi, &a, s, t, &decay, sp.cube()).unwrap();
        ensure(r.passes, format!("draw {draw} violates the bound: {r:?}"))?;
        worst = worst.max(r.ratio);
    }
    Ok(format!("100 draws, no violation; largest lhs/rhs {worst:.2e}"))
}

const THETA: f64 = std::f64::consts::PI / 5.0;

fn c5_oracle() -> Check {
    let clock = Instant::now();
    let model = TimeDependentModel::autonomous(&build_bcs_model(1, 1.0, 0.5, None, &Default::default()).unwrap());
    let rho = product_state(&coherent(THETA, 0.0), &space(1, 0, 2)).unwrap();
    let flow = solve_self_consistency(&model, &rho, 0.0, 2.0, &SolverConfig::default()).unwrap();
    let slot = flow.slot_index(0, 1).unwrap();
    let worst = flow
        .times()
        .into_iter()
        .zip(flow.scalars())
        .map(|(t, g)| (g[slot] - pair_amplitude(THETA, 0.5, 1.0, t)).norm())
        .fold(0.0, f64::max);
    ensure(worst <= 1e-6, format!("max deviation {worst:e}"))?;
    within(clock, Duration::from_secs(60), "oracle run")?;
    Ok(format!(
        "max deviation {worst:.2e} over {} nodes on [0, 2]",
        flow.times().len()
    ))
}

fn c6_picard() -> Check {
    let mut runs = Vec::new();
    for name in ["bcs-selfconsistent", "bcs-converge", "mixture-demo"] {
        let cfg = preset_config(name);
        let l = cfg.sweep.box_eff.unwrap_or(*cfg.feasible_ls().last().unwrap());
        let cells = match &cfg.mixture {
            Some(m) => m
                .components
                .iter()
                .map(|c| CellState::from_spec(&c.cell, &cfg.period().unwrap(), 2).unwrap())
                .collect(),
            None => vec![cfg.cell().unwrap()],
        };
        for cell in cells {
            let rho = product_state(&cell, &space(1, l, 2)).unwrap();
            let flow =
                solve_self_consistency(&cfg.model().unwrap(), &rho, cfg.time.s, cfg.time.t, &cfg.solver).unwrap();
            runs.push((name, flow));
        }
    }
    let mut worst: f64 = 0.0;
    let mut iters = 0;
    for (name, flow) in &runs {
        for c in &flow.chunks {
            let last = *c.defects.last().unwrap();
            ensure(
                last <= 1e-8 && c.iterations <= 30,
                format!(
                    "{name}: chunk [{}, {}] defect {last:e} after {} iterations",
                    c.start, c.end, c.iterations
                ),
            )?;
            ensure(c.end - c.start <= 0.1 + 1e-12, format!("{name}: chunk longer than 0.1"))?;
            worst = worst.max(last);
            iters = iters.max(c.iterations);
        }
    }

    let cfg = SolverConfig {
        tol: 1e-8,
        ..Default::default()
    };
    let model = TimeDependentModel::autonomous(&build_bcs_model(1, 1.0, 0.5, Some(0.3), &Default::default()).unwrap());
    let rho = product_state(&coherent(THETA, 0.0), &space(1, 1, 2)).unwrap();
    let whole = solve_self_consistency(&model, &rho, 0.0, 1.0, &cfg).unwrap();
    let first = solve_self_consistency(&model, &rho, 0.0, 0.45, &cfg).unwrap();
    let second = solve_self_consistency(&model, &first.final_state().unwrap(), 0.45, 1.0, &cfg).unwrap();
    let comp = whole
        .scalar_at(1.0)
        .iter()
        .zip(second.scalar_at(1.0))
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    ensure(comp <= 5.0 * cfg.tol, format!("composition defect {comp:e}"))?;
    Ok(format!(
        "{} flows: defects <= {worst:.1e}, <= {iters} iterations per chunk; composition {comp:.1e}",
        runs.len()
    ))
}

fn c7_main_trend() -> Check {
    let clock = Instant::now();
    let cfg = preset_config("bcs-converge");
    let (model, cell) = (cfg.model().unwrap(), cfg.cell().unwrap());
    let ls = [0, 1, 2];
    let r = main_convergence(&model, &cell, &pairing(), &unit(), 0.0, 1.0, &ls, None, &cfg.solver).unwrap();
    let gaps = r.gaps();
    ensure(r.trend.strictly_decreasing, format!("gaps {gaps:?}"))?;
    let zeroed = main_convergence(
        &model.without_long_range(),
        &cell,
        &pairing(),
        &unit(),
        0.0,
        1.0,
        &ls,
        None,
        &cfg.solver,
    )
    .unwrap();
    let zero = zeroed.gaps().into_iter().fold(0.0, f64::max);
    ensure(zero <= 2.0 * INTEGRATOR_TOL, format!("zeroed gap {zero:e}"))?;
    within(clock, Duration::from_secs(600), "flagship sweep")?;
    Ok(format!(
        "gaps {:.4}, {:.4}, {:.4}; zeroed {zero:.1e}; {:.1} s",
        gaps[0],
        gaps[1],
        gaps[2],
        clock.elapsed().as_secs_f64()
    ))
}

fn occupation_cell(p: f64) -> CellState {
    let m = DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(1.0 - p, 0.0), C64::new(p, 0.0)]));
    CellState::from_spec(
        &CellSpec::Custom {
            matrix: encode_matrix(&m),
        },
        &PeriodVector::ones(1),
        1,
    )
    .unwrap()
}

fn random_even_cell(period: &PeriodVector, spins: usize, rng: &mut ChaCha8Rng) -> CellState {
    let dim = 1usize << (period.volume() * spins);
    let g = DMatrix::from_fn(dim, dim, |r: usize, c: usize| {
        if (r ^ c).count_ones() % 2 == 1 {
            C64::new(0.0, 0.0)
        } else {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        }
    });
    let rho = &g * g.adjoint();
    let rho = &rho / rho.trace();
    CellState::new(period.clone(), spins, StateRepr::Mixed(rho)).unwrap()
}

/// `(a†_{0↑} + a†_{1↑})(a†_{0↓} + a†_{1↓})|0⟩ / 2` on a two-site cell.
fn delocalized_pair() -> CellState {
    let cell = SiteSet::new(vec![site(0), site(1)]);
    let c = |x: i64, s: usize| LocalOperator::creator(&cell, 2, &site(x), s).unwrap();
    let op = c(0, 0).add(&c(1, 0)).mul(&c(0, 1).add(&c(1, 1)));
    let mut vacuum = DVector::zeros(16);
    vacuum[0] = C64::new(1.0, 0.0);
    let psi = op.matrix() * vacuum * C64::new(0.5, 0.0);
    CellState::new(PeriodVector::new(vec![2]).unwrap(), 2, StateRepr::Pure(psi)).unwrap()
}

fn c8_ergodicity_and_densities() -> Check {
    let p = 0.3;
    let ones = PeriodVector::ones(1);
    let mut defects = Vec::new();
    let mut worst_rel: f64 = 0.0;
    for l in 1..=4 {
        let sp = space(1, l, 1);
        let rho = product_state(&occupation_cell(p), &sp).unwrap();
        let d = ergodicity_defect(&rho, &sp.number(&site(0), 0).unwrap(), &ones).unwrap();
        let oracle = p * (1.0 - p) / sp.cube().volume() as f64;
        worst_rel = worst_rel.max((d - oracle).abs() / oracle);
        defects.push(d);
    }
    ensure(
        worst_rel <= 0.2,
        format!("ergodicity defect off the oracle by {worst_rel:.3}"),
    )?;
    ensure(defects.windows(2).all(|w| w[1] < w[0]), format!("defects {defects:?}"))?;

    let phi = Interaction::hopping(1, 2, 1.0)
        .unwrap()
        .add(&Interaction::hubbard(1, 0.7).unwrap())
        .unwrap();
    let b = LocalOperator::number(&SiteSet::singleton(site(0)), 2, &site(0), 0)
        .unwrap()
        .add(&unit());
    let mut sweeps = vec![energy_density_convergence(&phi, &delocalized_pair(), &b, &[0, 1, 2]).unwrap()];
    let cfg = preset_config("density-sweep");
    let b1 = LocalOperator::identity(SiteSet::singleton(site(0)), 1).unwrap();
    sweeps.push(
        energy_density_convergence(
            &cfg.model().unwrap().at(0.0).unwrap().short,
            &cfg.cell().unwrap(),
            &b1,
            &cfg.feasible_ls(),
        )
        .unwrap(),
    );
    for gaps in &sweeps {
        let g: Vec<f64> = gaps.iter().map(|x| x.gap).collect();
        ensure(g.windows(2).all(|w| w[1] < w[0]), format!("density gaps {g:?}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cg_err: f64 = 0.0;
    for (l1, l2, l, spins) in [(2, 1, 3, 1), (4, 2, 4, 1), (2, 1, 2, 2)] {
        let (p1, p2) = (
            PeriodVector::new(vec![l1]).unwrap(),
            PeriodVector::new(vec![l2]).unwrap(),
        );
        for _ in 0..4 {
            let rho = product_state(&random_even_cell(&p1, spins, &mut rng), &space(1, l, spins)).unwrap();
            let cg = coarse_grain(&rho, &p1, &p2).unwrap();
            let range = rng.gen_range(0..=1);
            let phi = Interaction::random_ti(1, spins, range, &mut rng).unwrap();
            let before = rho.expectation_local(&phi.energy_density(&p1).unwrap().op).unwrap();
            let after = cg.expectation_local(&phi.energy_density(&p2).unwrap().op).unwrap();
            cg_err = cg_err.max((before - after).norm());
        }
    }
    ensure(cg_err <= 1e-9, format!("coarse-graining defect {cg_err:e}"))?;
    Ok(format!(
        "ergodicity within {:.1}% of c/|box|; {} density sweeps strictly decreasing; coarse-graining {cg_err:.1e}",
        100.0 * worst_rel,
        sweeps.len()
    ))
}

fn c9_mixtures() -> Check {
    let lambda = 0.35;
    let model = TimeDependentModel::autonomous(&build_bcs_model(1, 1.0, 0.5, Some(0.3), &Default::default()).unwrap());
    let sp = space(1, 1, 2);
    let (c1, c2) = (coherent(THETA, 0.8), coherent(0.9, -0.4));
    let (r1, r2) = (product_state(&c1, &sp).unwrap(), product_state(&c2, &sp).unwrap());
    let mix = Mixture::new(vec![(lambda, r1.clone()), (1.0 - lambda, r2.clone())]).unwrap();
    let cfg = SolverConfig::default();
    let (a, b) = (
        pairing().embed(&sp).unwrap(),
        sp.creator(&site(1), 0).unwrap().add(&sp.identity()),
    );

    let joint = r1.repr().density() * C64::new(lambda, 0.0) + r2.repr().density() * C64::new(1.0 - lambda, 0.0);
    let joint = LatticeState::new(
        sp.clone(),
        PeriodVector::ones(1),
        StateRepr::Mixed(joint),
        StateTag::Custom,
    )
    .unwrap();
    let mut worst = (mix.expectation(&a) - joint.expectation(&a)).norm();

    let evo = evolve_mixture(&mix, &model, 0.0, 0.6, &cfg).unwrap();
    let f1 = solve_self_consistency(&model, &r1, 0.0, 0.6, &cfg).unwrap();
    let f2 = solve_self_consistency(&model, &r2, 0.0, 0.6, &cfg).unwrap();
    let nodes = f1.times();
    for &t in &nodes {
        let v1 = effective_matrix_element(&f1, &r1, &a, &b, 0.0, t).unwrap();
        let v2 = effective_matrix_element(&f2, &r2, &a, &b, 0.0, t).unwrap();
        let want = v1 * lambda + v2 * (1.0 - lambda);
        worst = worst.max((evo.matrix_element(&a, &b, t).unwrap() - want).norm());
    }
    ensure(worst <= 1e-12, format!("affinity defect {worst:e}"))?;

    let flagship = TimeDependentModel::autonomous(&build_bcs_model(1, 1.0, 0.5, None, &Default::default()).unwrap());
    let ls = [0, 1, 2];
    let single = main_convergence(
        &flagship,
        &coherent(THETA, 0.0),
        &pairing(),
        &unit(),
        0.0,
        1.0,
        &ls,
        None,
        &cfg,
    )
    .unwrap();
    let one = mixture_convergence(
        &[(1.0, coherent(THETA, 0.0))],
        false,
        &flagship,
        &pairing(),
        &unit(),
        0.0,
        1.0,
        &ls,
        None,
        &cfg,
    )
    .unwrap();
    for (x, y) in single.entries.iter().zip(&one.mixed) {
        ensure(
            x.full == y.full && x.effective == y.effective && x.gap == y.gap,
            format!("L = {} differs", x.l),
        )?;
    }
    Ok(format!(
        "affine to {worst:.1e} at {} nodes; single-component mixture identical bit-for-bit",
        nodes.len()
    ))
}

fn c10_reproducibility() -> Check {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    for p in presets() {
        let cfg = parse_config(p.toml).unwrap();
        let first = execute(&cfg).map_err(|e| format!("{}: {e}", p.name))?;
        let second = one.install(|| execute(&cfg)).map_err(|e| format!("{}: {e}", p.name))?;
        ensure(
            !first.csv.is_empty() && first.csv == second.csv,
            format!("{}: CSV bodies differ", p.name),
        )?;
        ensure(first.passed(), format!("{}: {:?}", p.name, first.properties))?;
    }
    Ok(format!(
        "{} presets pass and give identical CSV bodies across runs and thread counts",
        presets().len()
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("CAR algebra exactness", c1_car),
        ("norm-bound suite", c2_norm_bounds),
        ("dynamics correctness", c3_dynamics),
        ("Lieb-Robinson commutator bound", c4_lieb_robinson),
        ("mean-field oracle equivalence", c5_oracle),
        ("self-consistency structure", c6_picard),
        ("flagship gap trend", c7_main_trend),
        ("ergodicity and density limits", c8_ergodicity_and_densities),
        ("mixture fidelity", c9_mixtures),
        ("reproducibility", c10_reproducibility),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout().lock();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = clock.elapsed().as_secs_f64();
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        writeln!(out, "criterion {:>2} {tag} {name}: {detail} [{secs:.1} s]", i + 1).unwrap();
        if result.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
