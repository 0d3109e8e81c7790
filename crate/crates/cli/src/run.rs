//! `simulate run`: one transient simulation of a deck.

use std::path::Path;

use vanroos::transient::{balance_report, proxy_norm, CarrierState, RunOutcome, Simulator, StepRecord};

use crate::config::{build_simulator, initial_condition, normalized, SimulationConfig};
use crate::output::{field_snapshot, num, BlowUpFile, Table};
use crate::{CliError, ExitStatus};

/// Everything a run produced, before anything is written.
#[derive(Debug)]
pub struct RunResult {
    pub simulator: Simulator,
    pub outcome: RunOutcome,
    pub timeseries: Table,
    pub iv: Table,
    /// `(accepted step, snapshot)` pairs requested by `snapshot_every`.
    pub snapshots: Vec<(usize, Table)>,
}

impl RunResult {
    pub fn status(&self) -> ExitStatus {
        let o = &self.outcome;
        if o.blowup.detected {
            ExitStatus::BlowUp
        } else if o.error.is_some() || o.final_state.t < self.simulator.config.t_end * (1.0 - 1e-12) {
            ExitStatus::Failure
        } else {
            ExitStatus::Complete
        }
    }

    pub fn message(&self) -> String {
        let o = &self.outcome;
        match self.status() {
            ExitStatus::Complete => format!("reached t = {} in {} steps", num(o.final_state.t), o.records.len()),
            ExitStatus::BlowUp => format!(
                "blow-up detected at t = {}: {}",
                o.blowup.t_star.map_or("?".into(), num),
                o.blowup.reason.clone().unwrap_or_default()
            ),
            _ => match &o.error {
                Some(e) => format!("solver failure at t = {}: {e}", num(o.final_state.t)),
                None => format!("stopped at t = {} after the step limit", num(o.final_state.t)),
            },
        }
    }
}

fn contact_names(sim: &Simulator) -> Vec<String> {
    sim.device
        .spec
        .boundary
        .contacts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.name.is_empty() {
                format!("contact{i}")
            } else {
                c.name.clone()
            }
        })
        .collect()
}

/// Nearest cell to each probe point.
fn probe_cells(sim: &Simulator, probes: &[Vec<f64>]) -> Vec<usize> {
    probes
        .iter()
        .map(|p| {
            let dist = |c: &[f64; 2]| p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (0..sim.device.mesh.num_cells())
                .min_by(|&a, &b| {
                    dist(&sim.device.mesh.cells[a].center).total_cmp(&dist(&sim.device.mesh.cells[b].center))
                })
                .unwrap_or(0)
        })
        .collect()
}

/// Runs a validated config without touching the filesystem.
pub fn execute(config: &SimulationConfig) -> Result<RunResult, CliError> {
    let sim = build_simulator(config)?;
    let initial = initial_condition(config, &sim.device);
    let names = contact_names(&sim);
    let probes = probe_cells(&sim, &config.output.probes);

    let mut header: Vec<String> = ["t", "dt", "gummel_iterations", "poisson_iterations", "norm"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(names.iter().map(|n| format!("current_{n}")));
    header.extend(["balance_electrons".into(), "balance_holes".into()]);
    for (i, _) in probes.iter().enumerate() {
        for f in ["phi", "Phi1", "Phi2", "u1", "u2"] {
            header.push(format!("probe{i}_{f}"));
        }
    }
    let mut timeseries = Table::new(header);
    let mut iv = Table::new(
        std::iter::once("t".to_string())
            .chain(names.iter().map(|n| format!("bias_{n}")))
            .chain(names.iter().map(|n| format!("current_{n}"))),
    );
    let mut snapshots = Vec::new();
    let mut failure = None;
    let mut steps = 0usize;

    let mut observe = |state: &CarrierState, record: Option<&StepRecord>| {
        let row = (|| -> vanroos::Result<(Vec<String>, Vec<f64>)> {
            let dirichlet = sim.dirichlet(state.t)?;
            let norm = proxy_norm(&sim.device, state, &dirichlet);
            let (dt, gi, pi, currents, balance) = match record {
                Some(r) => {
                    let b = balance_report(r);
                    (
                        r.dt,
                        r.gummel_iterations,
                        r.poisson_iterations,
                        r.contact_currents.clone(),
                        b.relative,
                    )
                }
                None => (0.0, 0, 0, sim.contact_currents(state)?, [0.0, 0.0]),
            };
            let mut row = vec![num(state.t), num(dt), gi.to_string(), pi.to_string(), num(norm)];
            row.extend(currents.iter().map(|v| num(*v)));
            row.extend(balance.iter().map(|v| num(*v)));
            for &c in &probes {
                for v in [
                    state.phi[c],
                    state.quasi_fermi[0][c],
                    state.quasi_fermi[1][c],
                    state.u[0][c],
                    state.u[1][c],
                ] {
                    row.push(num(v));
                }
            }
            Ok((row, currents))
        })();
        match row {
            Ok((row, currents)) => {
                timeseries.push(row);
                let mut r = vec![num(state.t)];
                for c in &sim.device.spec.boundary.contacts {
                    r.push(num(c.bias.as_ref().map_or(f64::NAN, |b| b.at(state.t))));
                }
                r.extend(currents.iter().map(|v| num(*v)));
                iv.push(r);
            }
            Err(e) => failure = failure.take().or(Some(e)),
        }
        if record.is_some() {
            steps += 1;
            let every = config.output.snapshot_every;
            if every > 0 && steps.is_multiple_of(every) {
                snapshots.push((steps, field_snapshot(&sim.device, state)));
            }
        }
    };
    let outcome = sim.run(&initial, &mut observe)?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(RunResult {
        simulator: sim,
        outcome,
        timeseries,
        iv,
        snapshots,
    })
}

/// Writes the declared sinks of a finished run into `out`.
pub fn write_outputs(config: &SimulationConfig, result: &RunResult, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let o = &config.output;
    std::fs::write(out.join(&o.config_dump), normalized(config))?;
    if let Some(name) = &o.timeseries {
        result.timeseries.write(&out.join(name))?;
    }
    if let Some(name) = &o.iv {
        result.iv.write(&out.join(name))?;
    }
    if let Some(name) = &o.fields {
        field_snapshot(&result.simulator.device, &result.outcome.final_state).write(&out.join(name))?;
    }
    for (step, table) in &result.snapshots {
        table.write(&out.join(format!("fields_{step:06}.csv")))?;
    }
    if result.status() == ExitStatus::BlowUp {
        let report = BlowUpFile::from(&result.outcome.blowup);
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(out.join(&o.blowup_report), text + "\n")?;
    }
    Ok(())
}

/// `simulate run`: parse, simulate, write. Returns the exit status and a
/// one-line summary.
pub fn cmd_run(deck: &Path, out: &Path) -> (ExitStatus, String) {
    let result = (|| -> Result<(ExitStatus, String), CliError> {
        let text = std::fs::read_to_string(deck).map_err(|e| CliError::Io(format!("{}: {e}", deck.display())))?;
        let config = crate::config::parse_config(&text)?;
        let result = execute(&config)?;
        write_outputs(&config, &result, out)?;
        Ok((result.status(), result.message()))
    })();
    match result {
        Ok(r) => r,
        Err(e) => (ExitStatus::Failure, e.to_string()),
    }
}
