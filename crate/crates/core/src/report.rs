//! Plain-text exporters for run artifacts.
//!
//! All CSV output is RFC-4180 with a header row, UTF-8, `.` decimal
//! separator, and fields rendered with the shortest round-trip float
//! representation, so identical runs produce byte-identical files.

use crate::adjoint::AdjointEnsemble;
use crate::coefficients::ProblemSpec;
use crate::forward::{ControlField, PathEnsemble, TimeGrid};
use crate::lq_oracle::RiccatiSolution;
use crate::measure::{ensemble_norm, EmpiricalMeasure};
use crate::optimizer::SolveSummary;
use serde::{Deserialize, Serialize};

fn push_floats(fields: &mut Vec<String>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        fields.push(format!("{v}"));
    }
}

fn render(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Convergence history: one row per iteration.
pub fn convergence_csv(summary: &SolveSummary) -> String {
    let rows = summary
        .iterations
        .iter()
        .map(|r| {
            let mut f = vec![r.iteration.to_string()];
            push_floats(&mut f, [r.cost, r.residual, r.step]);
            f
        })
        .collect();
    render(&["iteration", "cost", "residual", "step"], rows)
}

/// Final control field: one row per (step, particle).
pub fn control_csv(grid: &TimeGrid, ctrl: &ControlField) -> String {
    let d = ctrl.values[0][0].len();
    let header: Vec<String> = ["step".to_string(), "time".to_string(), "particle".to_string()]
        .into_iter()
        .chain((0..d).map(|c| format!("v{c}")))
        .collect();
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut rows = Vec::new();
    for (k, row) in ctrl.values.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let mut f = vec![k.to_string()];
            push_floats(&mut f, [grid.node(k)]);
            f.push(i.to_string());
            push_floats(&mut f, v.iter().copied());
            rows.push(f);
        }
    }
    render(&header_refs, rows)
}

/// Particle trajectories: one row per (step, particle).
pub fn trajectory_csv(grid: &TimeGrid, ens: &PathEnsemble) -> String {
    let n = ens.state(0, 0).len();
    let header: Vec<String> = ["step".to_string(), "time".to_string(), "particle".to_string()]
        .into_iter()
        .chain((0..n).map(|c| format!("x{c}")))
        .collect();
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut rows = Vec::new();
    for k in 0..=ens.steps() {
        for i in 0..ens.n_particles() {
            let mut f = vec![k.to_string()];
            push_floats(&mut f, [grid.node(k)]);
            f.push(i.to_string());
            push_floats(&mut f, ens.state(k, i).iter().copied());
            rows.push(f);
        }
    }
    render(&header_refs, rows)
}

/// Adjoint trajectories mirroring the state export.
pub fn adjoint_csv(grid: &TimeGrid, adj: &AdjointEnsemble) -> String {
    let n = adj.p[0][0].len();
    let n_vol = adj.q.first().map_or(0, |row| row[0].len());
    let mut header: Vec<String> = vec!["step".into(), "time".into(), "particle".into()];
    header.extend((0..n).map(|c| format!("p{c}")));
    for j in 0..n_vol {
        header.extend((0..n).map(move |c| format!("q{j}_{c}")));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut rows = Vec::new();
    for (k, prow) in adj.p.iter().enumerate() {
        for (i, p) in prow.iter().enumerate() {
            let mut f = vec![k.to_string()];
            push_floats(&mut f, [grid.node(k)]);
            f.push(i.to_string());
            push_floats(&mut f, p.iter().copied());
            if k < adj.q.len() {
                for qj in &adj.q[k][i] {
                    push_floats(&mut f, qj.iter().copied());
                }
            } else if n_vol > 0 {
                push_floats(&mut f, std::iter::repeat(f64::NAN).take(n * n_vol));
            }
            rows.push(f);
        }
    }
    render(&header_refs, rows)
}

/// Riccati gain schedule at the coarse grid nodes.
pub fn gains_csv(sol: &RiccatiSolution) -> String {
    let n = sol.pi[0].nrows();
    let d = sol.deviation_gain(0).nrows();
    let mut header: Vec<String> = vec!["step".into(), "time".into()];
    for a in 0..n {
        for b in 0..n {
            header.push(format!("pi_{a}{b}"));
        }
    }
    for a in 0..n {
        for b in 0..n {
            header.push(format!("mean_{a}{b}"));
        }
    }
    header.extend((0..n).map(|a| format!("offset_{a}")));
    for a in 0..d {
        for b in 0..n {
            header.push(format!("gain_{a}{b}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut rows = Vec::new();
    for k in 0..=sol.grid.steps {
        let mut f = vec![k.to_string()];
        push_floats(&mut f, [sol.grid.node(k)]);
        let idx = k * sol.substeps;
        push_floats(&mut f, sol.pi[idx].iter().copied());
        push_floats(&mut f, sol.mean_matrix[idx].iter().copied());
        push_floats(&mut f, sol.offset[idx].iter().copied());
        push_floats(&mut f, sol.deviation_gain(k).iter().copied());
        rows.push(f);
    }
    render(&header_refs, rows)
}

/// Per-step ensemble statistics plus the initial measure, JSON-serializable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleStepSummary {
    pub step: usize,
    pub time: f64,
    pub mean: Vec<f64>,
    pub norm: f64,
    /// Ensemble average of the running cost (absent at the terminal node).
    pub cost_integrand: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_particles: usize,
    pub steps: Vec<EnsembleStepSummary>,
    pub initial_measure: EmpiricalMeasure,
}

pub fn ensemble_summary(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    ens: &PathEnsemble,
    ctrl: &ControlField,
) -> EnsembleSummary {
    let w = ens.weights();
    let steps = (0..=grid.steps)
        .map(|k| {
            let mu = ens.measure(k);
            let cost_integrand = (k < grid.steps).then(|| {
                let t = grid.node(k);
                mu.points()
                    .iter()
                    .zip(&ctrl.values[k])
                    .zip(w)
                    .map(|((x, v), wi)| wi * (spec.running_cost)(x, mu, v, t))
                    .sum()
            });
            EnsembleStepSummary {
                step: k,
                time: grid.node(k),
                mean: mu.mean().iter().copied().collect(),
                norm: ensemble_norm(mu.points(), mu).expect("consistent ensemble"),
                cost_integrand,
            }
        })
        .collect();
    EnsembleSummary {
        n_particles: ens.n_particles(),
        steps,
        initial_measure: ens.measure(0).clone(),
    }
}

/// One atom per row: weight then coordinates.
pub fn measure_csv(m: &crate::measure::EmpiricalMeasure) -> String {
    let n = m.dim();
    let header: Vec<String> = ["weight".to_string()]
        .into_iter()
        .chain((0..n).map(|c| format!("x{c}")))
        .collect();
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows = m
        .points()
        .iter()
        .zip(m.weights())
        .map(|(p, w)| {
            let mut f = Vec::new();
            push_floats(&mut f, [*w]);
            push_floats(&mut f, p.iter().copied());
            f
        })
        .collect();
    render(&header_refs, rows)
}

/// Parse a measure back from [`measure_csv`] output.
pub fn measure_from_csv(text: &str) -> crate::error::Result<crate::measure::EmpiricalMeasure> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| crate::error::Error::Config("empty measure CSV".into()))?;
    let dim = header.split(',').count() - 1;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(crate::error::Error::Config(format!(
                "measure CSV row {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                dim + 1
            )));
        }
        let parse = |s: &str| -> crate::error::Result<f64> {
            s.parse::<f64>()
                .map_err(|e| crate::error::Error::Config(format!("bad float '{s}': {e}")))
        };
        weights.push(parse(fields[0])?);
        points.push(nalgebra::DVector::from_iterator(
            dim,
            fields[1..]
                .iter()
                .map(|s| parse(s))
                .collect::<crate::error::Result<Vec<f64>>>()?,
        ));
    }
    crate::measure::EmpiricalMeasure::new(points, weights)
}
