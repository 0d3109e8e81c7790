//! `simulate sweep`: independent runs over one scalar deck parameter.

use std::time::Instant;

use rayon::prelude::*;

use crate::config::parse_config;
use crate::output::{num, Table};
use crate::run::execute;
use crate::{CliError, ExitStatus};

/// Environment variable holding the worker count of sweeps.
pub const WORKERS_ENV: &str = "SIMULATE_WORKERS";

pub fn parse_values(list: &str) -> Result<Vec<f64>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("`{s}` is not a number")))
        })
        .collect()
}

/// Replaces the number at a dotted path such as
/// `device.boundary.contacts.0.bias`; array elements are addressed by index.
pub fn set_parameter(doc: &mut toml::Table, path: &str, value: f64) -> Result<(), CliError> {
    let bad = |msg: &str| CliError::Usage(format!("parameter `{path}`: {msg}"));
    let keys: Vec<&str> = path.split('.').collect();
    let mut node: &mut toml::Value = doc
        .get_mut(keys[0])
        .ok_or_else(|| bad(&format!("no key `{}`", keys[0])))?;
    for key in &keys[1..] {
        node = match node {
            toml::Value::Table(t) => t.get_mut(*key).ok_or_else(|| bad(&format!("no key `{key}`")))?,
            toml::Value::Array(a) => {
                let i: usize = key
                    .parse()
                    .map_err(|_| bad(&format!("`{key}` is not an array index")))?;
                a.get_mut(i).ok_or_else(|| bad(&format!("index {i} out of range")))?
            }
            _ => return Err(bad(&format!("`{key}` is inside a scalar"))),
        };
    }
    match node {
        toml::Value::Float(_) => *node = toml::Value::Float(value),
        toml::Value::Integer(_) if value.fract() == 0.0 && value.abs() < 9.0e15 => {
            *node = toml::Value::Integer(value as i64)
        }
        toml::Value::Integer(_) => *node = toml::Value::Float(value),
        _ => return Err(bad("does not address a scalar number")),
    }
    Ok(())
}

/// Worker count from the environment; `None` leaves the choice to rayon.
pub fn workers_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(None),
    }
}

struct Point {
    currents: Vec<f64>,
    status: &'static str,
    message: String,
    steps: usize,
    iterations: usize,
    seconds: f64,
}

fn run_point(text: &str, path: &str, value: f64) -> Result<Point, String> {
    let start = Instant::now();
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
    set_parameter(&mut doc, path, value).map_err(|e| e.to_string())?;
    let edited = toml::to_string(&doc).map_err(|e| e.to_string())?;
    let config = parse_config(&edited).map_err(|e| e.to_string())?;
    let result = execute(&config).map_err(|e| e.to_string())?;
    let o = &result.outcome;
    let currents = o.records.last().map(|r| r.contact_currents.clone()).unwrap_or_default();
    let status = match result.status() {
        ExitStatus::Complete => "ok",
        ExitStatus::BlowUp => "blowup",
        _ => "failed",
    };
    Ok(Point {
        currents,
        status,
        message: if status == "ok" {
            String::new()
        } else {
            result.message()
        },
        steps: o.records.len(),
        iterations: o.records.iter().map(|r| r.gummel_iterations).sum(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// One row per value in input order: value, final contact currents, wall
/// time, accepted steps, Gummel iterations, status and message. A failing
/// point is recorded in its row and does not stop the sweep.
pub fn sweep(text: &str, path: &str, values: &[f64], workers: Option<usize>) -> Result<Table, CliError> {
    let base = parse_config(text)?;
    let names: Vec<String> = base
        .device
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
        .collect();
    // Reject bad paths before spending any work.
    let mut probe: toml::Table = toml::from_str(text).map_err(|e| CliError::Usage(e.to_string()))?;
    set_parameter(&mut probe, path, 0.0)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    let points: Vec<Result<Point, String>> =
        pool.install(|| values.par_iter().map(|&v| run_point(text, path, v)).collect());

    let mut header = vec!["value".to_string()];
    header.extend(names.iter().map(|n| format!("current_{n}")));
    header.extend(["wall_time_s", "steps", "gummel_iterations", "status", "message"].map(String::from));
    let mut table = Table::new(header);
    for (&v, p) in values.iter().zip(points) {
        let mut row = vec![num(v)];
        match p {
            Ok(p) => {
                row.extend((0..names.len()).map(|i| p.currents.get(i).map_or("nan".into(), |c| num(*c))));
                row.extend([
                    num(p.seconds),
                    p.steps.to_string(),
                    p.iterations.to_string(),
                    p.status.into(),
                    p.message,
                ]);
            }
            Err(msg) => {
                row.extend(names.iter().map(|_| "nan".to_string()));
                row.extend([num(0.0), "0".into(), "0".into(), "failed".into(), msg]);
            }
        }
        table.push(row);
    }
    Ok(table)
}
