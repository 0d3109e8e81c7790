//! Property suites behind `simulate verify`. Every property reports the
//! measured value next to its bound; output carries no timings so that it is
//! reproducible for a fixed seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vanroos::device::{
    Contact, Device, DeviceSpec, InterfaceSpec, MaterialRegion, Mobility, RobinSegment, Schedule, Side,
};
use vanroos::operators::{assemble_poisson, dirichlet_data, poisson_load, solve_linear};
use vanroos::poisson::{
    apriori_bound, contraction_iterate, equilibrium_state, solve_operator_s, Metric, NonlinearPoissonProblem,
    CONTRACTION_TOL,
};
use vanroos::recombination::{kappa, kappa_lipschitz_bound, BulkRecombination, SurfaceRecombination};
use vanroos::statistics::{StatisticsModel, StatisticsPair};
use vanroos::transient::{balance_report, run, InitialCondition, Models, Simulator, TimeStepperConfig};

use crate::config::{build_simulator, initial_condition, parse_config, SimulationConfig};
use crate::decks;
use crate::CliError;

pub const SUITES: &[&str] = &[
    "kappa-lipschitz",
    "kappa-branches",
    "fermi-dirac",
    "s-nonexpansive",
    "s-zero",
    "s-agreement",
    "mms-poisson",
    "mms-time",
    "conservation",
    "equilibrium",
    "positivity-blowup",
    "gummel-oracle",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Property {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    /// `measured ≤ bound`.
    pub passed: bool,
}

impl Property {
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            bound,
            passed: measured <= bound,
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            measured: if ok { 1.0 } else { 0.0 },
            bound: 1.0,
            passed: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub properties: Vec<Property>,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64, properties: Vec<Property>) -> Self {
        Self {
            suite: suite.into(),
            seed,
            passed: properties.iter().all(|p| p.passed),
            properties,
        }
    }
}

/// Runs one named suite; `all` runs every suite in order.
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<SuiteReport>, CliError> {
    if name == "all" {
        return SUITES.iter().map(|s| run_one(s, seed)).collect();
    }
    Ok(vec![run_one(name, seed)?])
}

fn run_one(name: &str, seed: u64) -> Result<SuiteReport, CliError> {
    let props = match name {
        "kappa-lipschitz" => kappa_lipschitz(seed),
        "kappa-branches" => kappa_branches(seed),
        "fermi-dirac" => fermi_dirac()?,
        "s-nonexpansive" => s_samples(seed)?.nonexpansive,
        "s-zero" => s_zero()?,
        "s-agreement" => s_samples(seed)?.agreement,
        "mms-poisson" => mms_poisson()?,
        "mms-time" => mms_time()?,
        "conservation" => conservation()?,
        "equilibrium" => equilibrium()?,
        "positivity-blowup" => positivity_blowup()?,
        "gummel-oracle" => gummel_oracle()?,
        other => {
            let hint = strsim_closest(other);
            return Err(CliError::Usage(format!(
                "unknown suite `{other}`{hint}; available: all, {}",
                SUITES.join(", ")
            )));
        }
    };
    Ok(SuiteReport::new(name, seed, props))
}

fn strsim_closest(name: &str) -> String {
    SUITES
        .iter()
        .map(|s| (strsim::levenshtein(name, s), *s))
        .min()
        .filter(|(d, _)| *d <= 3)
        .map_or(String::new(), |(_, s)| format!(" (did you mean `{s}`?)"))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn ball(rng: &mut ChaCha8Rng, r: f64) -> [f64; 3] {
    loop {
        let v = [rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r)];
        if norm(&v) <= r {
            return v;
        }
    }
}

fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Pointwise Lipschitz certificate of κ on pairs from the radius-10 ball;
/// half of the pairs are independent, half are close neighbours.
fn kappa_lipschitz(seed: u64) -> Vec<Property> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut props = Vec::new();
    for a in [0.5, 1.0, 2.0] {
        let (mut violations, mut worst) = (0usize, 0.0f64);
        for i in 0..100_000 {
            let (e1, j1) = (ball(&mut rng, 10.0), ball(&mut rng, 10.0));
            let (e2, j2) = if i % 2 == 0 {
                (ball(&mut rng, 10.0), ball(&mut rng, 10.0))
            } else {
                let r = 10f64.powf(rng.gen_range(-6.0..0.0));
                (add3(e1, ball(&mut rng, r)), add3(j1, ball(&mut rng, r)))
            };
            let lhs = (kappa(&e1, &j1, a) - kappa(&e2, &j2, a)).abs();
            let rhs = kappa_lipschitz_bound(a, norm(&e1), norm(&j2), norm(&sub3(j1, j2)), norm(&sub3(e1, e2)));
            if lhs > rhs {
                violations += 1;
            }
            if rhs > 0.0 {
                worst = worst.max(lhs / rhs);
            }
        }
        props.push(Property::at_most(format!("violations a={a}"), violations as f64, 0.0));
        props.push(Property::at_most(format!("max ratio to bound a={a}"), worst, 1.0));
    }
    props
}

fn kappa_branches(seed: u64) -> Vec<Property> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut perp, mut range) = (0.0f64, 0usize);
    for _ in 0..100_000 {
        let a = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        // Orthogonal by construction: disjoint supports.
        let axis = rng.gen_range(0..3);
        let mut e = ball(&mut rng, 10.0);
        let mut j = [0.0; 3];
        j[axis] = rng.gen_range(-10.0..10.0);
        e[axis] = 0.0;
        perp = perp.max(kappa(&e, &j, a).abs());
        perp = perp.max(kappa(&e, &[0.0; 3], a).abs());
        let (e, j) = (ball(&mut rng, 10.0), ball(&mut rng, 10.0));
        let k = kappa(&e, &j, a);
        if !(k >= 0.0 && k <= norm(&j)) {
            range += 1;
        }
    }
    vec![
        Property::at_most("max |kappa| where e.j = 0", perp, 0.0),
        Property::at_most("samples outside [0, |j|]", range as f64, 0.0),
    ]
}

/// `F_{1/2}(s)` by composite Simpson on `t = √x` with `nodes` intervals.
pub fn fermi_dirac_oracle(s: f64, nodes: usize) -> f64 {
    let upper = (s.max(0.0) + 45.0).sqrt();
    let h = upper / nodes as f64;
    let f = |t: f64| t * t / (1.0 + (t * t - s).exp());
    let mut acc = f(0.0) + f(upper);
    for i in 1..nodes {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    4.0 / PI.sqrt() * acc * h / 3.0
}

fn fermi_dirac() -> Result<Vec<Property>, CliError> {
    let fd = StatisticsModel::fermi_dirac_half();
    let v0 = fd.eval(0.0)?;
    let oracle = fermi_dirac_oracle(0.0, 1_000_000);
    let mut props = vec![
        Property::at_most("|F(0) - quadrature oracle|", (v0 - oracle).abs(), 1e-5),
        Property::at_most("|F(0) - 0.76515|", (v0 - 0.76515).abs(), 1e-5),
    ];
    let mut worst = 0.0f64;
    let mut s = -12.0;
    while s >= -60.0 {
        worst = worst.max((fd.eval(s)? / s.exp() - 1.0).abs());
        s -= 0.25;
    }
    props.push(Property::at_most(
        "max relative deviation from exp(s), s <= -12",
        worst,
        1e-4,
    ));
    Ok(props)
}

fn region(name: &str, bounds: Vec<[f64; 2]>, eps: f64, mu: [f64; 2]) -> MaterialRegion {
    let d = bounds.len();
    MaterialRegion {
        name: name.into(),
        bounds,
        permittivity: vec![eps; d],
        mobility: Mobility {
            electrons: vec![mu[0]; d],
            holes: vec![mu[1]; d],
        },
    }
}

fn potential_contact(name: &str, side: Side, phi: f64) -> Contact {
    Contact {
        name: name.into(),
        side,
        range: None,
        bias: None,
        phi: Some(Schedule::Constant(phi)),
        quasi_fermi: Some([Schedule::Constant(0.0), Schedule::Constant(0.0)]),
    }
}

fn bar_1d() -> DeviceSpec {
    let mut spec = DeviceSpec::uniform_1d(1.0);
    spec.boundary.contacts = vec![
        potential_contact("left", Side::XMin, 0.0),
        potential_contact("right", Side::XMax, 0.0),
    ];
    spec
}

fn two_layer_2d() -> DeviceSpec {
    let mut spec = DeviceSpec::uniform_1d(1.0);
    spec.dimension = 2;
    spec.extent = vec![1.0, 1.0];
    spec.layers = vec![
        region("bottom", vec![[0.0, 1.0], [0.0, 0.5]], 1.0, [1.0, 1.0]),
        region("top", vec![[0.0, 1.0], [0.5, 1.0]], 2.0, [1.0, 1.0]),
    ];
    spec.interfaces = vec![InterfaceSpec {
        axis: 1,
        position: 0.5,
        range: None,
        model: SurfaceRecombination::Zero,
    }];
    spec.boundary.contacts = vec![
        potential_contact("left", Side::XMin, 0.0),
        potential_contact("right", Side::XMax, 0.0),
    ];
    spec.boundary.robin = vec![RobinSegment {
        side: Side::YMax,
        range: None,
        capacity: 1.0,
        load: Schedule::Constant(0.0),
    }];
    spec
}

fn meshes() -> [(&'static str, DeviceSpec, Vec<usize>); 2] {
    [("1d-64", bar_1d(), vec![64]), ("2d-8x8", two_layer_2d(), vec![8, 8])]
}

fn statistics() -> [(&'static str, StatisticsPair); 2] {
    [
        ("boltzmann", StatisticsPair::uniform(StatisticsModel::boltzmann())),
        (
            "fermi-dirac",
            StatisticsPair::uniform(StatisticsModel::fermi_dirac_half()),
        ),
    ]
}

fn problem(device: &Device, stats: StatisticsPair, omega: [Vec<f64>; 2]) -> vanroos::Result<NonlinearPoissonProblem> {
    NonlinearPoissonProblem::new(assemble_poisson(device)?, device.mesh.volumes(), stats, omega)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct SSamples {
    nonexpansive: Vec<Property>,
    agreement: Vec<Property>,
}

/// 100 random ω-pairs per mesh and statistics. Pairs alternate between
/// independent draws and small perturbations, all inside `‖ω‖∞ ≤ 5`.
fn s_samples(seed: u64) -> Result<SSamples, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nonexpansive = Vec::new();
    let mut agreement = Vec::new();
    for (mname, spec, res) in meshes() {
        let device = Device::new(spec, &res)?;
        let n = device.mesh.num_cells();
        for (sname, stats) in statistics() {
            let base = problem(&device, stats, [vec![0.0; n], vec![0.0; n]])?;
            let draw = |rng: &mut ChaCha8Rng, m: f64| -> [Vec<f64>; 2] {
                [
                    (0..n).map(|_| rng.gen_range(-m..m)).collect(),
                    (0..n).map(|_| rng.gen_range(-m..m)).collect(),
                ]
            };
            let (mut excess, mut bound_excess, mut newton_vs_contraction, mut cutoff) =
                (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64);
            let mut solved: Vec<([Vec<f64>; 2], Vec<f64>)> = Vec::new();
            for i in 0..100 {
                let w1 = draw(&mut rng, 5.0);
                let w2 = if i % 2 == 0 {
                    draw(&mut rng, 5.0)
                } else {
                    let scale = 10f64.powf(rng.gen_range(-4.0..0.0));
                    let d = draw(&mut rng, scale);
                    let near = |w: &[f64], d: &[f64]| -> Vec<f64> {
                        w.iter().zip(d).map(|(a, b)| (a + b).clamp(-5.0, 5.0)).collect()
                    };
                    [near(&w1[0], &d[0]), near(&w1[1], &d[1])]
                };
                let mut s = Vec::new();
                for w in [&w1, &w2] {
                    let p = base.with_omega(w.clone());
                    let (newton, _) = solve_operator_s(&p)?;
                    let (contr, _) = contraction_iterate(&p, Metric::Linearized, CONTRACTION_TOL, 10_000)?;
                    newton_vs_contraction = newton_vs_contraction.max(max_abs_diff(&newton, &contr));
                    let mut wide = p.clone();
                    wide.bound = Some(2.0 * p.cutoff_bound()?);
                    let (doubled, _) = solve_operator_s(&wide)?;
                    cutoff = cutoff.max(max_abs_diff(&newton, &doubled));
                    bound_excess = bound_excess.max(max_abs(&newton) - apriori_bound(w, &stats)?);
                    s.push(newton);
                }
                let dw = max_abs_diff(&w1[0], &w2[0]).max(max_abs_diff(&w1[1], &w2[1]));
                excess = excess.max(max_abs_diff(&s[0], &s[1]) - dw);
                solved.push((w1, s.swap_remove(0)));
            }
            let tag = format!("{mname} {sname}");
            nonexpansive.push(Property::at_most(
                format!("{tag}: max(|S(w)-S(w')| - |w-w'|)"),
                excess,
                1e-10,
            ));
            nonexpansive.push(Property::at_most(
                format!("{tag}: max(|S(w)| - K)"),
                bound_excess,
                1e-10,
            ));
            agreement.push(Property::at_most(
                format!("{tag}: |newton - contraction|"),
                newton_vs_contraction,
                1e-8,
            ));
            agreement.push(Property::at_most(
                format!("{tag}: change when K doubles"),
                cutoff,
                1e-12,
            ));
        }
    }
    Ok(SSamples {
        nonexpansive,
        agreement,
    })
}

fn s_zero() -> Result<Vec<Property>, CliError> {
    let mut props = Vec::new();
    let mixed = StatisticsPair {
        electrons: StatisticsModel::boltzmann(),
        holes: StatisticsModel::fermi_dirac_half(),
    };
    let mut all = statistics().to_vec();
    all.push(("mixed", mixed));
    for (mname, spec, res) in meshes() {
        let device = Device::new(spec, &res)?;
        let n = device.mesh.num_cells();
        for (sname, stats) in &all {
            let mut worst = 0.0f64;
            for k1 in [-2.0, 0.0, 1.5] {
                let k2 = stats.holes.invert(stats.electrons.eval(k1)?)?;
                let p = problem(&device, *stats, [vec![k1; n], vec![k2; n]])?;
                let (s, _) = solve_operator_s(&p)?;
                worst = worst.max(max_abs(&s));
            }
            props.push(Property::at_most(format!("{mname} {sname}: |S(k)|"), worst, 1e-12));
        }
    }
    Ok(props)
}

/// Least-squares slope of `ln e` over `ln h`.
pub fn observed_order(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Max-norm error of the linear Poisson solve against `exact` with source
/// `−(εφ')' = π² sin πx`, integrated exactly over each cell.
fn poisson_mms_error(spec: &DeviceSpec, n: usize, exact: impl Fn(f64) -> f64) -> Result<f64, CliError> {
    let device = Device::new(spec.clone(), &[n])?;
    let op = assemble_poisson(&device)?;
    let dirichlet = dirichlet_data(&device, &StatisticsPair::uniform(StatisticsModel::boltzmann()), 0.0)?;
    let mut b = poisson_load(&device, &op, &dirichlet, 0.0)?;
    let h = device.mesh.spacing[0];
    for (bi, c) in b.iter_mut().zip(&device.mesh.cells) {
        let (l, r) = (c.center[0] - 0.5 * h, c.center[0] + 0.5 * h);
        *bi += PI * ((PI * l).cos() - (PI * r).cos());
    }
    let phi = solve_linear(&op, &b)?;
    Ok(device
        .mesh
        .cells
        .iter()
        .zip(&phi)
        .fold(0.0f64, |m, (c, p)| m.max((p - exact(c.center[0])).abs())))
}

fn mms_poisson() -> Result<Vec<Property>, CliError> {
    let ns = [16usize, 32, 64, 128, 256];
    let h: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let unit = bar_1d();
    let mut layered = bar_1d();
    layered.layers = vec![
        region("left", vec![[0.0, 0.5]], 1.0, [1.0, 1.0]),
        region("right", vec![[0.5, 1.0]], 2.0, [1.0, 1.0]),
    ];
    layered.boundary.contacts[1] = potential_contact("right", Side::XMax, 2.0);
    // Continuous potential and flux (= 2) at the material jump.
    let piecewise = |x: f64| {
        if x <= 0.5 {
            (PI * x).sin() + 2.0 * x
        } else {
            0.5 * (PI * x).sin() + x + 1.0
        }
    };
    let mut props = Vec::new();
    let cases: [(&str, &DeviceSpec, &dyn Fn(f64) -> f64); 2] = [
        ("eps = 1", &unit, &|x: f64| (PI * x).sin()),
        ("eps in {1, 2}", &layered, &piecewise),
    ];
    for (name, spec, exact) in cases {
        let errs = ns
            .iter()
            .map(|&n| poisson_mms_error(spec, n, exact))
            .collect::<Result<Vec<_>, _>>()?;
        let p = observed_order(&h, &errs);
        props.push(Property::at_most(format!("{name}: |order - 2|"), (p - 2.0).abs(), 0.2));
    }
    Ok(props)
}

/// Spatially uniform relaxation `u' = r̂ (g − u²)` of both carriers on an
/// insulated bar; the exact solution is a shifted `tanh`.
fn mms_time() -> Result<Vec<Property>, CliError> {
    let (rate, g, u0, t_end) = (1.0f64, 1.0f64, 0.2f64, 1.0);
    let exact = g.sqrt() * (g.sqrt() * rate * t_end + (u0 / g.sqrt()).atanh()).tanh();
    let mut spec = DeviceSpec::uniform_1d(1.0);
    spec.boundary.robin = vec![RobinSegment {
        side: Side::XMin,
        range: None,
        capacity: 1.0,
        load: Schedule::Constant(0.0),
    }];
    let mut models = Models::new(StatisticsPair::uniform(StatisticsModel::boltzmann()));
    models.bulk = vec![BulkRecombination::MassAction { rate, g }];
    let (mut hs, mut errs) = (Vec::new(), Vec::new());
    for level in 0..5 {
        let dt = 0.1 / 2f64.powi(level);
        let config = TimeStepperConfig {
            dt,
            dt_min: dt,
            dt_max: dt,
            t_end,
            adaptive: false,
            ..TimeStepperConfig::default()
        };
        let sim = Simulator::new(Device::new(spec.clone(), &[4])?, models.clone(), config)?;
        let outcome = run(&sim, &InitialCondition::Densities([vec![u0; 4], vec![u0; 4]]))?;
        if let Some(e) = outcome.error {
            return Err(e.into());
        }
        let s = &outcome.final_state;
        hs.push(dt);
        errs.push(
            s.u[0]
                .iter()
                .chain(&s.u[1])
                .fold(0.0f64, |m, u| m.max((u - exact).abs())),
        );
    }
    let p = observed_order(&hs, &errs);
    Ok(vec![Property::at_most(
        "|order - 1| over 4 halvings",
        (p - 1.0).abs(),
        0.2,
    )])
}

fn deck(text: &str) -> Result<SimulationConfig, CliError> {
    Ok(parse_config(text)?)
}

fn conservation() -> Result<Vec<Property>, CliError> {
    let mut props = Vec::new();
    for (name, text) in [
        ("diode", decks::DIODE),
        ("two-layer-interface", decks::TWO_LAYER_INTERFACE),
        ("insulated", decks::INSULATED),
    ] {
        let config = deck(text)?;
        let sim = build_simulator(&config)?;
        let initial = initial_condition(&config, &sim.device);
        let (mut worst, mut resum, mut negative, mut steps) = (0.0f64, 0.0f64, 0usize, 0usize);
        let outcome = sim.run(&initial, &mut |state, record| {
            if state.u.iter().flatten().any(|u| !(*u > 0.0)) {
                negative += 1;
            }
            let Some(r) = record else { return };
            steps += 1;
            let b = balance_report(r);
            worst = worst.max(b.relative[0]).max(b.relative[1]);
            for cb in &r.balance {
                let sum: f64 = cb
                    .interface_rates
                    .iter()
                    .map(|&(f, rate)| rate * sim.device.mesh.faces[f].area)
                    .sum();
                resum = resum.max((sum - cb.interface).abs());
            }
        })?;
        props.push(Property::flag(
            format!("{name}: reached t_end"),
            outcome.error.is_none() && !outcome.blowup.detected && steps > 0,
        ));
        props.push(Property::at_most(
            format!("{name}: max relative balance residual"),
            worst,
            1e-12,
        ));
        props.push(Property::at_most(
            format!("{name}: interface re-summation"),
            resum,
            1e-15,
        ));
        props.push(Property::at_most(
            format!("{name}: nonpositive densities"),
            negative as f64,
            0.0,
        ));
    }
    Ok(props)
}

fn equilibrium() -> Result<Vec<Property>, CliError> {
    let config = deck(decks::EQUILIBRIUM)?;
    let sim = build_simulator(&config)?;
    let eq = sim.initial_state(&InitialCondition::Equilibrium)?;
    let outcome = run(&sim, &InitialCondition::Equilibrium)?;
    let s = &outcome.final_state;
    let mut drift = max_abs_diff(&s.phi, &eq.phi);
    for k in 0..2 {
        drift = drift
            .max(max_abs_diff(&s.u[k], &eq.u[k]))
            .max(max_abs_diff(&s.quasi_fermi[k], &eq.quasi_fermi[k]))
            .max(max_abs_diff(&s.chemical[k], &eq.chemical[k]));
    }
    let mut props = vec![
        Property::at_most(
            "accepted steps - 100",
            (outcome.records.len() as f64 - 100.0).abs(),
            0.0,
        ),
        Property::at_most("drift after 100 steps of 0.1", drift, 1e-10),
    ];

    // Abrupt symmetric junction, |d| = 1: the built-in potential is the
    // difference of the neutral potentials, 2 asinh(1/2).
    let mut spec = DeviceSpec::uniform_1d(20.0);
    spec.doping.bulk = vec![
        vanroos::device::DopingBox {
            bounds: vec![[0.0, 10.0]],
            value: 1.0,
        },
        vanroos::device::DopingBox {
            bounds: vec![[10.0, 20.0]],
            value: -1.0,
        },
    ];
    spec.boundary.contacts = ["anode", "cathode"]
        .iter()
        .zip([Side::XMin, Side::XMax])
        .map(|(n, side)| Contact {
            name: n.to_string(),
            side,
            range: None,
            bias: Some(Schedule::Constant(0.0)),
            phi: None,
            quasi_fermi: None,
        })
        .collect();
    let device = Device::new(spec, &[256])?;
    let eq = equilibrium_state(&device, &StatisticsPair::uniform(StatisticsModel::boltzmann()))?;
    let vbi = (eq.phi[255] - eq.phi[0]).abs();
    props.push(Property::at_most(
        "|built-in potential - 2 asinh(1/2)|",
        (vbi - 2.0 * 0.5f64.asinh()).abs(),
        1e-3,
    ));
    Ok(props)
}

fn positivity_blowup() -> Result<Vec<Property>, CliError> {
    let config = deck(decks::AVALANCHE_RUNAWAY)?;
    let sim = build_simulator(&config)?;
    let initial = initial_condition(&config, &sim.device);
    let stats = sim.models.stats;
    let (mut bad, mut inconsistent) = (0usize, 0.0f64);
    let outcome = sim.run(&initial, &mut |state, _| match state.consistency(&stats) {
        Ok((rel, relation, positive)) => {
            if !positive {
                bad += 1;
            }
            inconsistent = inconsistent.max(rel / 1e-10).max(relation / 1e-13);
        }
        Err(_) => bad += 1,
    })?;
    let b = &outcome.blowup;
    let h = &b.history;
    let increasing = h.len() >= 3 && h[h.len() - 3..].windows(2).all(|w| w[0].1 < w[1].1);
    let threshold_path = b.detected && b.reason.as_deref() != Some("step-size collapse");
    Ok(vec![
        Property::at_most("accepted states with nonpositive density", bad as f64, 0.0),
        Property::at_most("consistency error / tolerance", inconsistent, 1.0),
        Property::flag(
            "blow-up detected before t_end",
            b.detected && b.t_star.is_some_and(|t| t < sim.config.t_end),
        ),
        Property::flag("detected by the norm threshold", threshold_path),
        Property::flag("norm history strictly increasing at detection", increasing),
    ])
}

fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 - 0.5 * x + x * x / 12.0
    } else {
        x / x.exp_m1()
    }
}

/// Fully coupled implicit-Euler system of a two-cell bar with Boltzmann
/// statistics and SRH, unknowns `(φ, Φ₁, Φ₂)` per cell, solved by Newton
/// with a difference-quotient Jacobian.
struct Monolithic {
    h: f64,
    eps: f64,
    mu: [f64; 2],
    doping: [f64; 2],
    /// `(φ, [Φ₁, Φ₂])` at the left and right contact.
    contacts: [(f64, [f64; 2]); 2],
    srh: [f64; 5],
    u_old: [[f64; 2]; 2],
    dt: f64,
}

impl Monolithic {
    fn residual(&self, x: &[f64; 6]) -> [f64; 6] {
        let [n_i, n1, n2, tau1, tau2] = self.srh;
        let u1 = [(x[2] - x[0]).exp(), (x[3] - x[1]).exp()];
        let u2 = [(x[4] + x[0]).exp(), (x[5] + x[1]).exp()];
        let (cl, cr) = (self.contacts[0], self.contacts[1]);
        let phi = [cl.0, x[0], x[1], cr.0];
        let n = [(cl.1[0] - cl.0).exp(), u1[0], u1[1], (cr.1[0] - cr.0).exp()];
        let p = [(cl.1[1] + cl.0).exp(), u2[0], u2[1], (cr.1[1] + cr.0).exp()];
        let dist = [self.h / 2.0, self.h, self.h / 2.0];
        let mut r = [0.0; 6];
        for f in 0..3 {
            let (a, b) = (f, f + 1);
            let d = phi[b] - phi[a];
            let field = -self.eps * d / dist[f];
            let fn_ = self.mu[0] * (bernoulli(d) * n[a] - bernoulli(-d) * n[b]) / dist[f];
            let fp = self.mu[1] * (bernoulli(-d) * p[a] - bernoulli(d) * p[b]) / dist[f];
            for (node, sign) in [(a, 1.0), (b, -1.0)] {
                if node == 1 || node == 2 {
                    let c = node - 1;
                    r[c] += sign * field;
                    r[2 + c] += sign * fn_;
                    r[4 + c] += sign * fp;
                }
            }
        }
        for c in 0..2 {
            let rec = (u1[c] * u2[c] - n_i * n_i) / (tau2 * (u1[c] + n1) + tau1 * (u2[c] + n2));
            r[c] -= self.h * (self.doping[c] + u1[c] - u2[c]);
            r[2 + c] += self.h * ((u1[c] - self.u_old[0][c]) / self.dt + rec);
            r[4 + c] += self.h * ((u2[c] - self.u_old[1][c]) / self.dt + rec);
        }
        r
    }

    fn solve(&self, mut x: [f64; 6]) -> ([f64; 6], f64) {
        for _ in 0..60 {
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
            let dx = gauss6(jac, r);
            x.iter_mut().zip(dx).for_each(|(x, d)| *x -= d);
            if max_abs(&dx) < 1e-15 {
                break;
            }
        }
        (x, max_abs(&self.residual(&x)))
    }
}

fn gauss6(mut a: [[f64; 6]; 6], mut b: [f64; 6]) -> [f64; 6] {
    for col in 0..6 {
        let piv = (col..6)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
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

fn constant(s: &Option<Schedule>) -> Result<f64, CliError> {
    match s {
        Some(Schedule::Constant(v)) => Ok(*v),
        _ => Err(CliError::Usage("oracle deck needs constant contact data".into())),
    }
}

/// One Gummel step on the two-cell SRH deck against the monolithic oracle.
fn gummel_oracle() -> Result<Vec<Property>, CliError> {
    let config = deck(decks::SRH_TWO_CELL)?;
    let spec = &config.device;
    let layer = &spec.layers[0];
    let sim = build_simulator(&config)?;
    let mesh = &sim.device.mesh;
    if mesh.num_cells() != 2 || spec.layers.len() != 1 || spec.boundary.contacts.len() != 2 {
        return Err(CliError::Usage(
            "oracle deck must be a single-layer two-cell bar".into(),
        ));
    }
    let Some(BulkRecombination::Srh {
        n_i,
        n1,
        n2,
        tau1,
        tau2,
    }) = config.recombination.bulk.first().cloned()
    else {
        return Err(CliError::Usage("oracle deck needs SRH recombination".into()));
    };
    let mut contacts = [(0.0, [0.0; 2]); 2];
    for c in &spec.boundary.contacts {
        let qf = c
            .quasi_fermi
            .clone()
            .map(|[a, b]| [Some(a), Some(b)])
            .unwrap_or([None, None]);
        let slot = if c.side == Side::XMin { 0 } else { 1 };
        contacts[slot] = (constant(&c.phi)?, [constant(&qf[0])?, constant(&qf[1])?]);
    }
    let state = sim.initial_state(&initial_condition(&config, &sim.device))?;
    let dt = config.stepper.dt;
    let (next, _) = sim.gummel_step(&state, dt)?;
    let oracle = Monolithic {
        h: mesh.spacing[0],
        eps: layer.permittivity[0],
        mu: [layer.mobility.electrons[0], layer.mobility.holes[0]],
        doping: [mesh.doping[0], mesh.doping[1]],
        contacts,
        srh: [n_i, n1, n2, tau1, tau2],
        u_old: [[state.u[0][0], state.u[0][1]], [state.u[1][0], state.u[1][1]]],
        dt,
    };
    let start = [
        state.phi[0],
        state.phi[1],
        state.quasi_fermi[0][0],
        state.quasi_fermi[0][1],
        state.quasi_fermi[1][0],
        state.quasi_fermi[1][1],
    ];
    let (x, residual) = oracle.solve(start);
    let got = [
        next.phi[0],
        next.phi[1],
        next.quasi_fermi[0][0],
        next.quasi_fermi[0][1],
        next.quasi_fermi[1][0],
        next.quasi_fermi[1][1],
    ];
    let tol = config.stepper.gummel_tol;
    Ok(vec![
        Property::at_most("oracle residual", residual, 1e-12),
        Property::at_most("|gummel - monolithic| / gummel_tol", max_abs_diff(&got, &x) / tol, 10.0),
        Property::flag("step moved the state", max_abs_diff(&start, &x) > 1e-6),
    ])
}
