mod common;

use common::{bar, fixed_contact, layered_1d, max_abs, max_abs_diff, observed_order, pn_diode, robin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vanroos::device::{Device, DeviceSpec, DopingBox, Side};
use vanroos::recombination::{BulkRecombination, SurfaceRecombination};
use vanroos::statistics::{StatisticsModel, StatisticsPair};
use vanroos::transient::{
    balance_report, compute_currents, detect_blowup, gummel_step, run, split_data, CarrierState, InitialCondition,
    Models, SchemeKind, Simulator, TimeStepperConfig,
};

fn boltzmann() -> StatisticsPair {
    StatisticsPair::uniform(StatisticsModel::boltzmann())
}

fn simulator(spec: DeviceSpec, res: &[usize], models: Models, config: TimeStepperConfig) -> Simulator {
    Simulator::new(Device::new(spec, res).unwrap(), models, config).unwrap()
}

fn fixed_steps(dt: f64, t_end: f64) -> TimeStepperConfig {
    TimeStepperConfig {
        dt,
        dt_min: dt.min(1e-10),
        dt_max: dt,
        t_end,
        adaptive: false,
        ..TimeStepperConfig::default()
    }
}

fn unit_srh() -> BulkRecombination {
    BulkRecombination::Srh {
        n_i: 1.0,
        n1: 1.0,
        n2: 1.0,
        tau1: 1.0,
        tau2: 1.0,
    }
}

/// Unit bar with capacitive ends and no carrier contacts.
fn insulated() -> DeviceSpec {
    let mut spec = DeviceSpec::uniform_1d(1.0);
    spec.boundary.robin = vec![robin(Side::XMin, 1.0, 0.0), robin(Side::XMax, 0.5, 0.3)];
    spec.doping.bulk = vec![DopingBox {
        bounds: vec![[0.0, 0.4]],
        value: 0.7,
    }];
    spec
}

fn random_levels(rng: &mut ChaCha8Rng, n: usize, m: f64) -> [Vec<f64>; 2] {
    [
        (0..n).map(|_| rng.gen_range(-m..m)).collect(),
        (0..n).map(|_| rng.gen_range(-m..m)).collect(),
    ]
}

fn mass(sim: &Simulator, u: &[f64]) -> f64 {
    sim.device.mesh.volumes().iter().zip(u).map(|(v, u)| v * u).sum()
}

#[test]
fn split_data_examples() {
    let sim = simulator(
        bar(0.0, 0.0),
        &[16],
        Models::new(boltzmann()),
        TimeStepperConfig::default(),
    );
    let s = split_data(&sim, 0.0).unwrap();
    assert!(max_abs(&s.phi_d) == 0.0);
    assert!(max_abs(&s.quasi_fermi_d[0]) == 0.0 && max_abs(&s.quasi_fermi_d[1]) == 0.0);

    let mut spec = bar(0.0, 0.0);
    spec.doping.bulk = vec![DopingBox {
        bounds: vec![[0.0, 1.0]],
        value: 1.0,
    }];
    let sim = simulator(spec, &[64], Models::new(boltzmann()), TimeStepperConfig::default());
    let s = sim.split_data(0.0).unwrap();
    let peak = s.phi_d.iter().cloned().fold(f64::MIN, f64::max);
    assert!((peak - 0.125).abs() < 1e-3, "{peak}");
    for (c, p) in sim.device.mesh.cells.iter().zip(&s.phi_d) {
        let x = c.center[0];
        assert!((p - 0.5 * x * (1.0 - x)).abs() < 1e-3);
    }

    let mut spec = bar(0.0, 0.0);
    spec.boundary.contacts = vec![
        fixed_contact("left", Side::XMin, 0.0, [0.5, 0.5]),
        fixed_contact("right", Side::XMax, 0.0, [0.5, 0.5]),
    ];
    let sim = simulator(spec, &[32], Models::new(boltzmann()), TimeStepperConfig::default());
    let s = sim.split_data(0.0).unwrap();
    for k in 0..2 {
        assert!(s.quasi_fermi_d[k].iter().all(|v| (v - 0.5).abs() < 1e-13));
    }
}

#[test]
fn equilibrium_is_unchanged_by_a_step() {
    let mut models = Models::new(boltzmann());
    models.bulk = vec![unit_srh()];
    let sim = simulator(pn_diode(20.0, 1.0, 0.0), &[64], models, TimeStepperConfig::default());
    let eq = sim.initial_state(&InitialCondition::Equilibrium).unwrap();
    for dt in [1e-3, 0.5, 10.0] {
        let (next, record) = gummel_step(&sim, &eq, dt).unwrap();
        assert!(max_abs_diff(&next.phi, &eq.phi) <= 1e-10);
        for k in 0..2 {
            assert!(max_abs_diff(&next.quasi_fermi[k], &eq.quasi_fermi[k]) <= 1e-10);
            assert!(max_abs_diff(&next.u[k], &eq.u[k]) <= 1e-10);
        }
        let report = balance_report(&record);
        assert!(report.relative.iter().all(|r| *r <= 1e-13), "{report:?}");
    }
}

#[test]
fn insulated_device_conserves_charge() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let sim = simulator(
        insulated(),
        &[40],
        Models::new(boltzmann()),
        TimeStepperConfig::default(),
    );
    let mut state = sim
        .initial_state(&InitialCondition::QuasiFermi(random_levels(&mut rng, 40, 1.0)))
        .unwrap();
    for _ in 0..10 {
        let (next, record) = sim.gummel_step(&state, 0.05).unwrap();
        let before = mass(&sim, &state.u[0]) - mass(&sim, &state.u[1]);
        let after = mass(&sim, &next.u[0]) - mass(&sim, &next.u[1]);
        assert!((after - before).abs() <= 1e-12 * before.abs().max(1.0));
        for k in 0..2 {
            let (m0, m1) = (mass(&sim, &state.u[k]), mass(&sim, &next.u[k]));
            assert!((m1 - m0).abs() <= 1e-12 * m0);
            // Only the storage term is nonzero here.
            let b = &record.balance[k];
            assert_eq!((b.outflow, b.bulk, b.surface, b.interface), (0.0, 0.0, 0.0, 0.0));
            assert!(b.storage.abs() <= 1e-12 * b.scale);
        }
        state = next;
    }
}

fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// Backward-Euler residual of the full system on a two-cell bar with SRH,
/// Boltzmann statistics and unit coefficients; unknowns `(φ, Φ₁, Φ₂)` per
/// cell.
struct TwoCell {
    doping: [f64; 2],
    contacts: [(f64, [f64; 2]); 2],
    u_old: [[f64; 2]; 2],
    dt: f64,
}

impl TwoCell {
    fn residual(&self, x: &[f64; 6]) -> [f64; 6] {
        let h = 0.5;
        let phi = [x[0], x[1]];
        let u1 = [(x[2] - x[0]).exp(), (x[3] - x[1]).exp()];
        let u2 = [(x[4] + x[0]).exp(), (x[5] + x[1]).exp()];
        // Node values left contact, cells, right contact.
        let (cl, cr) = (self.contacts[0], self.contacts[1]);
        let nodes_phi = [cl.0, phi[0], phi[1], cr.0];
        let nodes_u1 = [(cl.1[0] - cl.0).exp(), u1[0], u1[1], (cr.1[0] - cr.0).exp()];
        let nodes_u2 = [(cl.1[1] + cl.0).exp(), u2[0], u2[1], (cr.1[1] + cr.0).exp()];
        let dist = [h / 2.0, h, h / 2.0];
        let mut r = [0.0; 6];
        for f in 0..3 {
            let (a, b) = (f, f + 1);
            let d = nodes_phi[b] - nodes_phi[a];
            let e_flux = -(nodes_phi[b] - nodes_phi[a]) / dist[f];
            let f1 = (bernoulli(d) * nodes_u1[a] - bernoulli(-d) * nodes_u1[b]) / dist[f];
            let f2 = (bernoulli(-d) * nodes_u2[a] - bernoulli(d) * nodes_u2[b]) / dist[f];
            for (node, sign) in [(a, 1.0), (b, -1.0)] {
                if (1..=2).contains(&node) {
                    let c = node - 1;
                    r[c] += sign * e_flux;
                    r[2 + c] += sign * f1;
                    r[4 + c] += sign * f2;
                }
            }
        }
        for c in 0..2 {
            let srh = (u1[c] * u2[c] - 1.0) / (u1[c] + 1.0 + u2[c] + 1.0);
            r[c] -= h * (self.doping[c] + u1[c] - u2[c]);
            r[2 + c] += h * ((u1[c] - self.u_old[0][c]) / self.dt + srh);
            r[4 + c] += h * ((u2[c] - self.u_old[1][c]) / self.dt + srh);
        }
        r
    }

    fn solve(&self, mut x: [f64; 6]) -> [f64; 6] {
        for _ in 0..50 {
            let r = self.residual(&x);
            let mut jac = [[0.0; 6]; 6];
            for j in 0..6 {
                let step = 1e-7 * x[j].abs().max(1.0);
                let (mut xp, mut xm) = (x, x);
                xp[j] += step;
                xm[j] -= step;
                let (rp, rm) = (self.residual(&xp), self.residual(&xm));
                for i in 0..6 {
                    jac[i][j] = (rp[i] - rm[i]) / (2.0 * step);
                }
            }
            let dx = gauss(jac, r);
            for i in 0..6 {
                x[i] -= dx[i];
            }
            if dx.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-15 {
                break;
            }
        }
        x
    }
}

fn gauss(mut a: [[f64; 6]; 6], mut b: [f64; 6]) -> [f64; 6] {
    for col in 0..6 {
        let piv = (col..6)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..6 {
            let f = a[row][col] / a[col][col];
            for k in col..6 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 6];
    for row in (0..6).rev() {
        let s: f64 = (row + 1..6).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[test]
fn gummel_step_matches_monolithic_newton() {
    let left = (0.2, [0.3, 0.1]);
    let right = (-0.1, [0.0, -0.2]);
    let mut spec = bar(0.0, 0.0);
    spec.boundary.contacts = vec![
        fixed_contact("left", Side::XMin, left.0, left.1),
        fixed_contact("right", Side::XMax, right.0, right.1),
    ];
    spec.doping.bulk = vec![
        DopingBox {
            bounds: vec![[0.0, 0.5]],
            value: 1.0,
        },
        DopingBox {
            bounds: vec![[0.5, 1.0]],
            value: -0.5,
        },
    ];
    let mut models = Models::new(boltzmann());
    models.bulk = vec![unit_srh()];
    models.scheme = SchemeKind::ScharfetterGummel;
    let config = TimeStepperConfig::default();
    let tol = config.gummel_tol;
    let sim = simulator(spec, &[2], models, config);
    let state = sim
        .initial_state(&InitialCondition::QuasiFermi([vec![0.1, 0.2], vec![0.05, -0.1]]))
        .unwrap();
    let dt = 0.1;
    let (next, _) = sim.gummel_step(&state, dt).unwrap();

    let oracle = TwoCell {
        doping: [1.0, -0.5],
        contacts: [left, right],
        u_old: [[state.u[0][0], state.u[0][1]], [state.u[1][0], state.u[1][1]]],
        dt,
    };
    let x0 = [
        state.phi[0],
        state.phi[1],
        state.quasi_fermi[0][0],
        state.quasi_fermi[0][1],
        state.quasi_fermi[1][0],
        state.quasi_fermi[1][1],
    ];
    let x = oracle.solve(x0);
    assert!(max_abs(&oracle.residual(&x)) < 1e-13);
    let got = [
        next.phi[0],
        next.phi[1],
        next.quasi_fermi[0][0],
        next.quasi_fermi[0][1],
        next.quasi_fermi[1][0],
        next.quasi_fermi[1][1],
    ];
    assert!(max_abs_diff(&got, &x) <= 10.0 * tol, "{got:?} vs {x:?}");
    // The step actually moved the state.
    assert!(max_abs_diff(&got, &x0) > 1e-3);
}

#[test]
fn equilibrium_currents_vanish() {
    let sim = simulator(
        pn_diode(20.0, 1.0, 0.0),
        &[64],
        Models::new(boltzmann()),
        TimeStepperConfig::default(),
    );
    let eq = sim.initial_state(&InitialCondition::Equilibrium).unwrap();
    let j = compute_currents(&sim, &eq).unwrap();
    for k in 0..2 {
        assert!(max_abs(&j.faces[k]) <= 1e-13, "{:e}", max_abs(&j.faces[k]));
    }
}

/// Uniform chemical potential `s` with `Φ₁ = φ + s`, `Φ₂ = s − φ` and
/// `φ = 1 − x`.
fn linear_drop(n: usize, s: f64) -> (Simulator, CarrierState) {
    let mut spec = bar(0.0, 0.0);
    spec.boundary.contacts = vec![
        fixed_contact("left", Side::XMin, 1.0, [1.0 + s, s - 1.0]),
        fixed_contact("right", Side::XMax, 0.0, [s, s]),
    ];
    let sim = simulator(spec, &[n], Models::new(boltzmann()), TimeStepperConfig::default());
    let phi: Vec<f64> = sim.device.mesh.cells.iter().map(|c| 1.0 - c.center[0]).collect();
    let qf = [phi.iter().map(|p| p + s).collect(), phi.iter().map(|p| s - p).collect()];
    let state = CarrierState::from_quasi_fermi(0.0, phi, qf, &sim.models.stats).unwrap();
    (sim, state)
}

#[test]
fn linear_quasi_fermi_drop_gives_exact_current() {
    let s: f64 = 0.3;
    let u = s.exp();
    let (sim, state) = linear_drop(16, s);
    let j = compute_currents(&sim, &state).unwrap();
    // j_k = u μ ∇Φ_k with ∇Φ₁ = −1 and ∇Φ₂ = 1.
    assert!(j.faces[0].iter().all(|v| (v + u).abs() <= 1e-12));
    assert!(j.faces[1].iter().all(|v| (v - u).abs() <= 1e-12));
}

#[test]
fn reversed_contacts_negate_currents() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 12;
    let phi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let qf = random_levels(&mut rng, n, 1.0);
    let contacts = [(0.4, [0.2, -0.3]), (-0.2, [0.5, 0.1])];
    let build = |c: [(f64, [f64; 2]); 2]| {
        let mut spec = bar(0.0, 0.0);
        spec.boundary.contacts = vec![
            fixed_contact("left", Side::XMin, c[0].0, c[0].1),
            fixed_contact("right", Side::XMax, c[1].0, c[1].1),
        ];
        let mut models = Models::new(boltzmann());
        models.scheme = SchemeKind::ScharfetterGummel;
        simulator(spec, &[n], models, TimeStepperConfig::default())
    };
    let sim = build(contacts);
    let mirrored = build([contacts[1], contacts[0]]);
    let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
    let state = CarrierState::from_quasi_fermi(0.0, phi.clone(), qf.clone(), &sim.models.stats).unwrap();
    let flipped =
        CarrierState::from_quasi_fermi(0.0, rev(&phi), [rev(&qf[0]), rev(&qf[1])], &sim.models.stats).unwrap();
    let a = compute_currents(&sim, &state).unwrap();
    let b = compute_currents(&mirrored, &flipped).unwrap();
    for k in 0..2 {
        let neg: Vec<f64> = rev(&b.faces[k]).iter().map(|v| -v).collect();
        assert_eq!(a.faces[k], neg);
    }
}

#[test]
fn interface_recombination_balance_and_resummation() {
    let model = SurfaceRecombination::SurfaceSrh {
        n_i: 1.0,
        n1: 0.5,
        n2: 2.0,
        v1: 3.0,
        v2: 1.5,
    };
    let mut spec = layered_1d(1.0, &[0.5], &[1.0, 2.0], model.clone());
    spec.boundary.contacts = vec![
        fixed_contact("left", Side::XMin, 0.0, [0.4, 0.4]),
        fixed_contact("right", Side::XMax, 0.0, [-0.2, 0.3]),
    ];
    let mut models = Models::new(boltzmann());
    models.bulk = vec![unit_srh()];
    let sim = simulator(spec, &[32], models, TimeStepperConfig::default());
    let mut state = sim.initial_state(&InitialCondition::Equilibrium).unwrap();
    let faces = &sim.device.mesh.interface_faces[0];
    for _ in 0..5 {
        let (next, record) = sim.gummel_step(&state, 0.1).unwrap();
        for k in 0..2 {
            let b = &record.balance[k];
            assert!(b.relative_residual() <= 1e-12, "{}", b.relative_residual());
            let tagged: Vec<usize> = b.interface_rates.iter().map(|r| r.0).collect();
            assert_eq!(&tagged, faces);
            let resum: f64 = b
                .interface_rates
                .iter()
                .map(|&(f, rate)| rate * sim.device.mesh.faces[f].area)
                .sum();
            assert!((resum - b.interface).abs() <= 1e-15, "{resum} {}", b.interface);
            assert!(b.interface != 0.0);
            // Rates agree with the model at the new interface trace.
            for &(f, rate) in &b.interface_rates {
                let (l, r) = sim.device.mesh.faces[f].cells();
                let r = r.unwrap();
                let trace = [0.5 * (next.u[0][l] + next.u[0][r]), 0.5 * (next.u[1][l] + next.u[1][r])];
                assert!((rate + model.eval(trace).unwrap()).abs() <= 1e-8);
            }
        }
        state = next;
    }
}

#[test]
fn detector_examples() {
    let cfg = TimeStepperConfig {
        blowup_threshold: 10.0,
        ..TimeStepperConfig::default()
    };
    let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 50.0)).collect();
    assert!(!detect_blowup(&flat, &cfg).detected);

    let growth: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 1.5f64.powi(i))).collect();
    let first = growth.iter().position(|s| s.1 > 10.0).unwrap();
    let report = detect_blowup(&growth, &cfg);
    assert!(report.detected);
    assert_eq!(report.t_star, Some(growth[first].0));
    let h = &report.history;
    assert!(h[h.len() - 3..].windows(2).all(|w| w[0].1 < w[1].1));

    // Above threshold but not increasing.
    let down: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 100.0 - i as f64)).collect();
    assert!(!detect_blowup(&down, &cfg).detected);
}

#[test]
fn step_size_collapse_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let config = TimeStepperConfig {
        dt: 1e-2,
        dt_min: 5e-3,
        gummel_max_iter: 1,
        ..TimeStepperConfig::default()
    };
    let sim = simulator(bar(0.0, 0.0), &[16], Models::new(boltzmann()), config);
    let outcome = run(&sim, &InitialCondition::QuasiFermi(random_levels(&mut rng, 16, 1.0))).unwrap();
    assert!(outcome.blowup.detected);
    assert_eq!(outcome.blowup.reason.as_deref(), Some("step-size collapse"));
    assert_eq!(outcome.rejected_steps, 2);
    assert!(outcome.records.is_empty());
}

#[test]
fn equilibrium_run_is_constant() {
    let mut models = Models::new(boltzmann());
    models.bulk = vec![unit_srh()];
    let sim = simulator(pn_diode(20.0, 1.0, 0.0), &[64], models, TimeStepperConfig::default());
    let eq = sim.initial_state(&InitialCondition::Equilibrium).unwrap();
    let mut worst = 0.0f64;
    let outcome = sim
        .run(&InitialCondition::Equilibrium, &mut |s, _| {
            worst = worst.max(max_abs_diff(&s.phi, &eq.phi));
            for k in 0..2 {
                worst = worst.max(max_abs_diff(&s.quasi_fermi[k], &eq.quasi_fermi[k]));
            }
        })
        .unwrap();
    assert!(outcome.error.is_none() && !outcome.blowup.detected);
    assert!((outcome.final_state.t - 1.0).abs() < 1e-12);
    assert!(worst <= 1e-9);
}

#[test]
fn equilibrium_is_a_fixed_point_over_100_steps() {
    let mut models = Models::new(boltzmann());
    models.bulk = vec![unit_srh()];
    let sim = simulator(pn_diode(20.0, 1.0, 0.0), &[64], models, fixed_steps(0.1, 10.0));
    let eq = sim.initial_state(&InitialCondition::Equilibrium).unwrap();
    let outcome = run(&sim, &InitialCondition::Equilibrium).unwrap();
    assert_eq!(outcome.records.len(), 100);
    let s = &outcome.final_state;
    assert!(max_abs_diff(&s.phi, &eq.phi) <= 1e-10);
    for k in 0..2 {
        assert!(max_abs_diff(&s.u[k], &eq.u[k]) <= 1e-10);
        assert!(max_abs_diff(&s.quasi_fermi[k], &eq.quasi_fermi[k]) <= 1e-10);
        assert!(max_abs_diff(&s.chemical[k], &eq.chemical[k]) <= 1e-10);
    }
}

#[test]
fn forward_bias_current_is_positive_and_monotone() {
    let mut models = Models::new(boltzmann());
    models.bulk = vec![unit_srh()];
    let currents: Vec<f64> = [0.1, 0.2, 0.3, 0.4, 0.5]
        .iter()
        .map(|&v| {
            let config = TimeStepperConfig {
                dt: 0.1,
                dt_max: 50.0,
                t_end: 500.0,
                ..TimeStepperConfig::default()
            };
            let sim = simulator(pn_diode(10.0, 10.0, v), &[64], models.clone(), config);
            let outcome = run(&sim, &InitialCondition::Equilibrium).unwrap();
            assert!(outcome.error.is_none());
            let last = outcome.records.last().unwrap();
            // Close to steady state: both contacts carry the same current.
            let c = &last.contact_currents;
            assert!((c[0] + c[1]).abs() <= 1e-6 * c[0].abs());
            c[0]
        })
        .collect();
    assert!(currents[0] > 0.0);
    assert!(currents.windows(2).all(|w| w[1] > w[0]), "{currents:?}");
}

#[test]
fn accepted_states_stay_consistent_and_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut models = Models::new(StatisticsPair::uniform(StatisticsModel::fermi_dirac_half()));
    models.bulk = vec![unit_srh()];
    let config = TimeStepperConfig {
        t_end: 0.5,
        ..TimeStepperConfig::default()
    };
    let sim = simulator(pn_diode(10.0, 5.0, 0.3), &[48], models, config);
    let stats = sim.models.stats;
    let mut checked = 0;
    let outcome = sim
        .run(
            &InitialCondition::QuasiFermi(random_levels(&mut rng, 48, 0.5)),
            &mut |s, rec| {
                let (rel, relation, positive) = s.consistency(&stats).unwrap();
                assert!(rel <= 1e-10 && relation <= 1e-13 && positive);
                if let Some(r) = rec {
                    let b = balance_report(r);
                    assert!(b.relative.iter().all(|v| *v <= 1e-12), "{b:?}");
                }
                checked += 1;
            },
        )
        .unwrap();
    assert!(outcome.error.is_none());
    assert_eq!(checked, outcome.records.len() + 1);
}

#[test]
fn temporal_order_of_mass_action_relaxation() {
    let (rate, g, u0) = (1.0f64, 1.0f64, 0.2f64);
    let t_end = 1.0;
    let exact = g.sqrt() * (g.sqrt() * rate * t_end + (u0 / g.sqrt()).atanh()).tanh();
    let mut models = Models::new(boltzmann());
    models.bulk = vec![BulkRecombination::MassAction { rate, g }];
    let mut spec = DeviceSpec::uniform_1d(1.0);
    spec.boundary.robin = vec![robin(Side::XMin, 1.0, 0.0)];
    let (mut hs, mut errs) = (Vec::new(), Vec::new());
    for level in 0..5 {
        let dt = 0.1 / 2f64.powi(level);
        let sim = simulator(spec.clone(), &[4], models.clone(), fixed_steps(dt, t_end));
        let outcome = run(&sim, &InitialCondition::Densities([vec![u0; 4], vec![u0; 4]])).unwrap();
        assert!(outcome.error.is_none());
        let s = &outcome.final_state;
        let err = s.u[0]
            .iter()
            .chain(&s.u[1])
            .fold(0.0f64, |m, u| m.max((u - exact).abs()));
        hs.push(dt);
        errs.push(err);
    }
    let order = observed_order(&hs, &errs);
    assert!((order - 1.0).abs() <= 0.2, "order {order}, errors {errs:?}");
}

#[test]
fn recomputed_contact_currents_match_the_step_record() {
    let mut models = Models::new(boltzmann());
    models.bulk = vec![BulkRecombination::Srh {
        n_i: 1.0,
        n1: 1.0,
        n2: 1.0,
        tau1: 1.0,
        tau2: 1.0,
    }];
    let sim = simulator(pn_diode(10.0, 10.0, 0.3), &[32], models, fixed_steps(0.5, 0.5));
    let state = sim.initial_state(&InitialCondition::Equilibrium).unwrap();
    let (next, record) = sim.gummel_step(&state, 0.5).unwrap();
    let recomputed = sim.contact_currents(&next).unwrap();
    let scale = record.contact_currents.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    assert!(scale > 1e-6);
    assert!(
        max_abs_diff(&recomputed, &record.contact_currents) <= 1e-8 * scale,
        "{recomputed:?} vs {:?}",
        record.contact_currents
    );
}
