mod common;

use common::pseudospin::pair_amplitude;
use lrdyn::dynamics::{default_grid, propagate};
use lrdyn::fock::{LocalOperator, ModeSpace};
use lrdyn::hamiltonians::{HamiltonianFamily, Schedule, TimeDependentModel};
use lrdyn::interactions::build_bcs_model;
use lrdyn::lattice::{CubicBox, PeriodVector, Site, SiteSet};
use lrdyn::meanfield::{
    classical_flow_eval, effective_dynamics, effective_matrix_element, solve_self_consistency, CylinderObservable,
    SolverConfig,
};
use lrdyn::states::{product_state, CellSpec, CellState, LatticeState};
use lrdyn::C64;
use std::f64::consts::PI;

const THETA: f64 = PI / 5.0;
const MU: f64 = 0.5;
const GAMMA: f64 = 1.0;

fn space(radius: usize) -> ModeSpace {
    ModeSpace::new(CubicBox::new(1, radius).unwrap(), 2).unwrap()
}

fn coherent(sp: &ModeSpace, theta: f64, phase: f64) -> LatticeState {
    let cell = CellState::from_spec(&CellSpec::BcsCoherent { theta, phase }, &PeriodVector::ones(1), 2).unwrap();
    product_state(&cell, sp).unwrap()
}

fn bcs(gamma: f64, hopping: Option<f64>) -> TimeDependentModel {
    TimeDependentModel::autonomous(&build_bcs_model(1, gamma, MU, hopping, &Default::default()).unwrap())
}

fn pairing_at_origin() -> LocalOperator {
    let o = Site(vec![0]);
    let set = SiteSet::singleton(o.clone());
    LocalOperator::annihilator(&set, 2, &o, 1)
        .unwrap()
        .mul(&LocalOperator::annihilator(&set, 2, &o, 0).unwrap())
}

#[test]
fn flow_matches_pseudospin_precession() {
    let sp = space(0);
    let flow = solve_self_consistency(
        &bcs(GAMMA, None),
        &coherent(&sp, THETA, 0.0),
        0.0,
        2.0,
        &SolverConfig::default(),
    )
    .unwrap();
    let slot = flow.slot_index(0, 1).unwrap();
    let mut worst: f64 = 0.0;
    for (t, g) in flow.times().into_iter().zip(flow.scalars()) {
        worst = worst.max((g[slot] - pair_amplitude(THETA, MU, GAMMA, t)).norm());
    }
    assert!(worst <= 1e-6, "max deviation {worst:e}");
    assert!(flow.iterations() <= 30);

    let f = CylinderObservable::linear(pairing_at_origin());
    for (t, v) in classical_flow_eval(&flow, &f).unwrap() {
        assert!((v - pair_amplitude(THETA, MU, GAMMA, t)).norm() <= 1e-6);
    }
    let unit = CylinderObservable::linear(LocalOperator::identity(SiteSet::singleton(Site(vec![0])), 2).unwrap());
    for (_, v) in classical_flow_eval(&flow, &unit).unwrap() {
        assert!((v - C64::new(1.0, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn effective_dynamics_reproduces_oracle() {
    let sp = space(0);
    let rho = coherent(&sp, THETA, 0.0);
    let flow = solve_self_consistency(&bcs(GAMMA, None), &rho, 0.0, 2.0, &SolverConfig::default()).unwrap();
    let p = pairing_at_origin().embed(&sp).unwrap();
    for t in [0.0, 0.7, 2.0] {
        let tau = effective_dynamics(&flow, &p, 0.0, t).unwrap();
        let v = rho.expectation(&tau);
        assert!((v - pair_amplitude(THETA, MU, GAMMA, t)).norm() <= 1e-5, "t = {t}");
    }
    assert!(effective_dynamics(&flow, &p, 0.0, 0.0).unwrap().sub(&p).norm() < 1e-15);
}

#[test]
fn flow_composition() {
    let sp = space(1);
    let cfg = SolverConfig {
        tol: 1e-8,
        ..Default::default()
    };
    let model = bcs(GAMMA, Some(0.3));
    let rho = coherent(&sp, THETA, 0.0);
    let whole = solve_self_consistency(&model, &rho, 0.0, 1.0, &cfg).unwrap();
    let first = solve_self_consistency(&model, &rho, 0.0, 0.45, &cfg).unwrap();
    let second = solve_self_consistency(&model, &first.final_state().unwrap(), 0.45, 1.0, &cfg).unwrap();
    let a = whole.scalar_at(1.0);
    let b = second.scalar_at(1.0);
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    assert!(diff <= 5.0 * cfg.tol, "composition defect {diff:e}");
}

#[test]
fn zero_long_range_reduces_to_short_range_dynamics() {
    let sp = space(1);
    let model = bcs(0.0, Some(0.4));
    let rho = coherent(&sp, THETA, 0.0);
    let flow = solve_self_consistency(&model, &rho, 0.0, 1.0, &SolverConfig::default()).unwrap();
    let a = pairing_at_origin().embed(&sp).unwrap();
    let eff = effective_dynamics(&flow, &a, 0.0, 1.0).unwrap();
    let fam = HamiltonianFamily::from_model(&model.without_long_range(), &sp).unwrap();
    let full = propagate(&fam, &default_grid(&fam, 0.0, 1.0).unwrap())
        .unwrap()
        .heisenberg(&a)
        .unwrap();
    assert!(eff.sub(&full).norm() <= 1e-10);
}

#[test]
fn evolved_states_stay_normalized_and_bounded() {
    let sp = space(1);
    let mut model = bcs(GAMMA, Some(0.5));
    model.atoms[0].1 = Schedule::Sinusoidal {
        offset: 1.0,
        amplitude: 0.3,
        omega: 2.0,
        phase: 0.0,
    };
    let flow = solve_self_consistency(&model, &coherent(&sp, 0.9, 0.4), 0.0, 0.6, &SolverConfig::default()).unwrap();
    for b in &flow.boundary_states {
        assert!(((b.adjoint() * b).trace() - C64::new(1.0, 0.0)).norm() < 1e-9);
    }
    assert!(flow.scalar_sup() <= 1.0 + 1e-9);
    let unit = sp.identity();
    let v = effective_matrix_element(&flow, &coherent(&sp, 0.9, 0.4), &unit, &unit, 0.0, 0.6).unwrap();
    assert!((v - C64::new(1.0, 0.0)).norm() < 1e-9);
}

#[test]
fn picard_defects_contract() {
    let sp = space(0);
    let cfg = SolverConfig {
        max_subinterval: 0.1,
        ..Default::default()
    };
    let flow = solve_self_consistency(&bcs(GAMMA, None), &coherent(&sp, THETA, 0.0), 0.0, 0.1, &cfg).unwrap();
    let d = &flow.chunks[0].defects;
    for w in d.windows(2) {
        if w[0] > cfg.tol {
            assert!(w[1] <= w[0] / 2.0, "defects {d:?}");
        }
    }
}

#[test]
fn csv_export_has_one_row_per_node() {
    let sp = space(0);
    let flow = solve_self_consistency(
        &bcs(GAMMA, None),
        &coherent(&sp, THETA, 0.0),
        0.0,
        0.3,
        &SolverConfig::default(),
    )
    .unwrap();
    let csv = flow.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,re_g0_0,im_g0_0,re_g0_1,im_g0_1,iterations");
    assert_eq!(lines.count(), flow.times().len());
    let json = serde_json::to_string(&flow.record()).unwrap();
    assert!(json.contains("\"chunks\""));
}
