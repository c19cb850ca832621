use std::path::PathBuf;

use mfdl_core::linear_theory::{independence_baseline, linear_predictions};
use mfdl_core::meanfield::depth_scale;
use mfdl_core::phase::{self, BoundMultipliers};
use mfdl_core::simulator::{ensemble_run, EnsembleStats, InputSpec, Metric, NetworkConfig};
use mfdl_core::universality::{fit_window, universality_report, UniversalityBase};
use mfdl_core::{Activation, MeanField, MeanFieldParams, QuadratureRule};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, LengthmapMode, Quantity};
use crate::error::CliError;
use crate::output::{fmt_real, fmt_tag, Emitter};

/// Everything a subcommand needs besides its own config section.
pub struct Context {
    pub config: ExperimentConfig,
    pub rule: QuadratureRule,
    pub out_dir: PathBuf,
    pub timestamp: bool,
}

impl Context {
    pub fn new(config: ExperimentConfig, out_dir: PathBuf, timestamp: bool) -> Result<Self, CliError> {
        let rule = QuadratureRule::new(config.quad_order)?;
        if config.instances == 0 {
            return Err(CliError::Usage("instances must be >= 1".to_owned()));
        }
        Ok(Self {
            config,
            rule,
            out_dir,
            timestamp,
        })
    }

    fn emitter<T: Serialize>(&self, command: &str, section: &T) -> Result<Emitter, CliError> {
        let resolved = json!({
            "seed": self.config.seed,
            "quad_order": self.config.quad_order,
            "instances": self.config.instances,
            "section": section,
        });
        Emitter::new(&self.out_dir, command, &resolved, self.timestamp)
    }
}

fn files(paths: &[PathBuf]) -> Value {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn stat_cells(s: &EnsembleStats, l: usize) -> [String; 2] {
    [fmt_real(s.per_layer_mean[l - 1]), fmt_real(s.per_layer_stderr[l - 1])]
}

pub fn lengthmap(ctx: &Context) -> Result<Value, CliError> {
    let c = &ctx.config.lengthmap;
    if c.rhos.is_empty() {
        return Err(CliError::Usage("lengthmap.rhos is empty".to_owned()));
    }
    if c.simulate && c.mode == LengthmapMode::Map {
        return Err(CliError::Usage("simulation is only available in layers mode".to_owned()));
    }
    if c.mode == LengthmapMode::Layers && c.layers == 0 {
        return Err(CliError::Usage("lengthmap.layers must be >= 1".to_owned()));
    }
    let em = ctx.emitter("lengthmap", c)?;
    let mut written = Vec::new();
    for &rho in &c.rhos {
        let p = MeanFieldParams::new(c.sigma_w_sq, c.sigma_b_sq, rho)?;
        let mf = MeanField::new(p, c.activation, &ctx.rule)?;
        let mut rows = Vec::new();
        match c.mode {
            LengthmapMode::Map => {
                let q_star = match c.quantity {
                    Quantity::Q => f64::NAN,
                    Quantity::C => mf.q_star()?,
                };
                for x in c.map_grid.points()? {
                    let theory = match c.quantity {
                        Quantity::Q => mf.q_step(x)?,
                        Quantity::C => mf.correlation_map_unclamped(q_star, q_star, x)?.0.clamp(-1.0, 1.0),
                    };
                    rows.push(vec![fmt_real(x), fmt_real(theory), String::new(), String::new(), fmt_tag(rho)]);
                }
            }
            LengthmapMode::Layers => {
                let (theory, metric): (Vec<f64>, Metric) = match c.quantity {
                    Quantity::Q => (mf.q_trajectory_from_input(c.q0, c.layers)?, Metric::QAa),
                    Quantity::C => (
                        mf.c_trajectory_from_input(c.q0, c.q0, c.c0, c.layers)?
                            .iter()
                            .map(|s| s.c_ab)
                            .collect(),
                        Metric::CAb,
                    ),
                };
                let sim = if c.simulate {
                    eprintln!("lengthmap: simulating rho = {rho}");
                    let cfg = NetworkConfig {
                        depth: c.layers,
                        width: c.width,
                        params: p,
                        activation: c.activation,
                        seed: ctx.config.seed,
                    };
                    let inputs = InputSpec { q0: c.q0, c0: c.c0 };
                    ensemble_run(&cfg, ctx.config.instances, inputs, &[metric])?.remove(&metric)
                } else {
                    None
                };
                for l in 1..=c.layers {
                    let [m, se] = match &sim {
                        Some(s) => stat_cells(s, l),
                        None => [String::new(), String::new()],
                    };
                    rows.push(vec![l.to_string(), fmt_real(theory[l - 1]), m, se, fmt_tag(rho)]);
                }
            }
        }
        let name = format!(
            "lengthmap_{}_{}_{}_rho{}.csv",
            match c.quantity {
                Quantity::Q => "q",
                Quantity::C => "c",
            },
            match c.mode {
                LengthmapMode::Layers => "layers",
                LengthmapMode::Map => "map",
            },
            c.activation,
            fmt_tag(rho)
        );
        written.push(em.write(&name, &["layer_or_qin", "theory", "sim_mean", "sim_stderr", "rho"], &rows)?);
    }
    Ok(json!({ "command": "lengthmap", "files": files(&written) }))
}

pub const GRADSIM_COLUMNS: [&str; 13] = [
    "layer",
    "g_aa_mean",
    "g_aa_stderr",
    "g_ab_mean",
    "g_ab_stderr",
    "g_tilde_ab_mean",
    "g_tilde_ab_stderr",
    "linear_g_aa",
    "linear_g_ab",
    "chi1_g_aa",
    "chi1_g_ab",
    "chi1_g_tilde_ab",
    "chi2_g_ab",
];

pub fn gradsim(ctx: &Context) -> Result<Value, CliError> {
    let c = &ctx.config.gradsim;
    let p = MeanFieldParams::new(c.sigma_w_sq, c.sigma_b_sq, c.rho)?;
    let ds = MeanField::new(p, c.activation, &ctx.rule)?.depth_scales()?;
    let inputs = InputSpec {
        q0: c.q0.unwrap_or(ds.q_star),
        c0: c.c0.unwrap_or(ds.c_star),
    };
    let cfg = NetworkConfig {
        depth: c.depth,
        width: c.width,
        params: p,
        activation: c.activation,
        seed: ctx.config.seed,
    };
    eprintln!(
        "gradsim: {} instances, L = {}, N = {}",
        ctx.config.instances, c.depth, c.width
    );
    let stats = ensemble_run(&cfg, ctx.config.instances, inputs, &Metric::GRADIENT)?;
    let (aa, ab, tilde) = (&stats[&Metric::GAa], &stats[&Metric::GAb], &stats[&Metric::GTildeAb]);
    let linear = if c.activation == Activation::Linear {
        Some(linear_predictions(c.depth, &p, ds.q_star, ds.q_ab_star())?)
    } else {
        None
    };
    let depth = c.depth;
    let last = |s: &EnsembleStats| s.per_layer_mean[depth - 1];
    let mut rows = Vec::with_capacity(depth);
    for l in 1..=depth {
        let (chi1_aa, chi2_ab) = independence_baseline(l, depth, ds.chi1, ds.chi2, last(aa), last(ab));
        let (chi1_ab, chi1_tilde) = independence_baseline(l, depth, ds.chi1, ds.chi1, last(ab), last(tilde));
        let mut row = vec![l.to_string()];
        row.extend(stat_cells(aa, l));
        row.extend(stat_cells(ab, l));
        row.extend(stat_cells(tilde, l));
        match &linear {
            Some(pred) => row.extend([fmt_real(pred[l - 1].g_aa), fmt_real(pred[l - 1].g_ab)]),
            None => row.extend([String::new(), String::new()]),
        }
        row.extend([chi1_aa, chi1_ab, chi1_tilde, chi2_ab].map(fmt_real));
        rows.push(row);
    }
    let em = ctx.emitter("gradsim", c)?;
    let name = format!("gradsim_{}_rho{}.csv", c.activation, fmt_tag(c.rho));
    let path = em.write(&name, &GRADSIM_COLUMNS, &rows)?;
    Ok(json!({
        "command": "gradsim",
        "files": files(&[path]),
        "q0": inputs.q0,
        "c0": inputs.c0,
        "q_star": ds.q_star,
        "c_star": ds.c_star,
        "chi1": ds.chi1,
        "chi2": ds.chi2,
    }))
}

pub const UNIVERSALITY_COLUMNS: [&str; 11] = [
    "activation",
    "rho",
    "width",
    "metric",
    "exponent",
    "intercept",
    "r_squared",
    "n_points",
    "n_excluded",
    "sigma_w_sq",
    "error",
];

pub fn universality(ctx: &Context) -> Result<Value, CliError> {
    let c = &ctx.config.universality;
    let entries = match c.preset {
        Some(p) => p.entries(),
        None => c.entries.clone(),
    };
    if entries.is_empty() {
        return Err(CliError::Usage("universality: no configurations".to_owned()));
    }
    let base = UniversalityBase {
        depth: c.depth,
        sigma_b_sq: c.sigma_b_sq,
        seed: ctx.config.seed,
        c0: c.c0,
        chi1_target: c.chi1_target,
        sigma_w_bracket: c.sigma_w_bracket,
    };
    eprintln!(
        "universality: {} configurations x {} instances, L = {}",
        entries.len(),
        ctx.config.instances,
        c.depth
    );
    let rows = universality_report(&entries, &base, ctx.config.instances, &ctx.rule)?;
    let (lo, hi) = fit_window(c.depth);

    let mut fits = Vec::new();
    let mut scatter = Vec::new();
    let mut first_error = None;
    for row in &rows {
        let e = &row.entry;
        let head = [e.activation.to_string(), fmt_tag(e.rho), e.width.to_string(), row.metric.to_string()];
        let mut line = head.to_vec();
        match &row.fit {
            Ok(f) => {
                line.extend([fmt_real(f.exponent), fmt_real(f.log_intercept), fmt_real(f.r_squared)]);
                line.extend([f.n_points.to_string(), row.n_excluded.to_string()]);
                line.extend([fmt_real(row.sigma_w_sq), String::new()]);
            }
            Err(err) => {
                line.extend(std::iter::repeat_n(String::new(), 5));
                line.extend([fmt_real(row.sigma_w_sq), err.to_string()]);
                first_error.get_or_insert_with(|| err.clone());
            }
        }
        fits.push(line);
        for &(l, m, v) in &row.scatter {
            let mut s = head.to_vec();
            s.extend([l.to_string(), fmt_real(m), fmt_real(v), (lo <= l && l <= hi).to_string()]);
            scatter.push(s);
        }
    }
    let section = json!({ "resolved_entries": entries, "settings": c });
    let em = ctx.emitter("universality", &section)?;
    let written = [
        em.write("universality_fits.csv", &UNIVERSALITY_COLUMNS, &fits)?,
        em.write(
            "universality_scatter.csv",
            &["activation", "rho", "width", "metric", "layer", "mean", "variance", "in_fit_window"],
            &scatter,
        )?,
    ];
    if let Some(err) = first_error {
        eprintln!("universality: some rows failed; files were still written");
        return Err(err.into());
    }
    Ok(json!({ "command": "universality", "files": files(&written), "rows": rows.len() }))
}

pub const PHASE_COLUMNS: [&str; 12] = [
    "sigma_w_sq",
    "q_star",
    "c_star",
    "chi1",
    "chi2",
    "xi1",
    "xi2",
    "b12xi1",
    "b6xi2",
    "b12xi2",
    "trainable_bound",
    "converged",
];

pub fn phase(ctx: &Context) -> Result<Value, CliError> {
    let c = &ctx.config.phase;
    let p_base = MeanFieldParams::new(1.0, c.sigma_b_sq, c.rho)?;
    let grid = c.grid.points()?;
    let multipliers = BoundMultipliers {
        trainable: c.multiplier,
        comparison: c.comparison_multiplier,
    };
    let curve = phase::depth_scale_grid(&grid, &p_base, c.activation, &ctx.rule, multipliers)?;
    let mut rows = Vec::with_capacity(curve.len());
    for i in 0..curve.len() {
        let mut row: Vec<String> = [
            curve.sigma_w_sq_grid[i],
            curve.q_star[i],
            curve.c_star[i],
            curve.chi1[i],
            curve.chi2[i],
            curve.xi1[i],
            curve.xi2[i],
            curve.bound_12xi1[i],
            curve.bound_6xi2[i],
            curve.bound_12xi2[i],
            curve.trainable_bound[i],
        ]
        .map(fmt_real)
        .to_vec();
        row.push(curve.converged[i].to_string());
        rows.push(row);
        if let Some(d) = &curve.diagnostics[i] {
            eprintln!("phase: sigma_w_sq = {}: {d}", curve.sigma_w_sq_grid[i]);
        }
    }
    let em = ctx.emitter("phase", c)?;
    let name = format!("phase_{}_rho{}.csv", c.activation, fmt_tag(c.rho));
    let path = em.write(&name, &PHASE_COLUMNS, &rows)?;
    let n_failed = curve.converged.iter().filter(|ok| !**ok).count();
    Ok(json!({ "command": "phase", "files": files(&[path]), "points": curve.len(), "not_converged": n_failed }))
}

pub fn critical_line(ctx: &Context) -> Result<Value, CliError> {
    let c = &ctx.config.critical_line;
    let p_base = MeanFieldParams::new(1.0, c.sigma_b_sq, c.rho)?;
    let w = phase::critical_line(&p_base, c.activation, &ctx.rule, c.bracket)?;
    let chi1 = phase::chi1_at(&p_base, c.activation, &ctx.rule, w)?;
    let em = ctx.emitter("critical-line", c)?;
    let row = vec![
        c.activation.to_string(),
        fmt_tag(c.rho),
        fmt_real(c.sigma_b_sq),
        fmt_real(w),
        fmt_real(chi1),
    ];
    let path = em.write(
        "critical_line.csv",
        &["activation", "rho", "sigma_b_sq", "sigma_w_sq_crit", "chi1"],
        &[row],
    )?;
    Ok(json!({ "command": "critical-line", "files": files(&[path]), "sigma_w_sq_crit": w, "chi1": chi1 }))
}

pub fn fixed_point(ctx: &Context) -> Result<Value, CliError> {
    let c = &ctx.config.fixed_point;
    let p = MeanFieldParams::new(c.sigma_w_sq, c.sigma_b_sq, c.rho)?;
    let mf = MeanField::new(p, c.activation, &ctx.rule)?;
    let q = mf.q_fixed_point(c.q0)?;
    let cp = mf.c_fixed_point(c.c0)?;
    let chi1 = mf.chi1(q.value)?;
    let chi2 = mf.chi2(q.value, cp.value)?;
    let (xi1, xi2) = (depth_scale(chi1), depth_scale(chi2));
    let bound = phase::trainable_length_from_chis(chi1, chi2, phase::DEFAULT_MULTIPLIER);
    let em = ctx.emitter("fixed-point", c)?;
    let row = [q.value, cp.value, chi1, chi2, xi1, xi2, bound].map(fmt_real).to_vec();
    let path = em.write(
        "fixed_point.csv",
        &["q_star", "c_star", "chi1", "chi2", "xi1", "xi2", "trainable_bound"],
        &[row],
    )?;
    let finite = |x: f64| if x.is_finite() { json!(x) } else { Value::Null };
    Ok(json!({
        "command": "fixed-point",
        "files": files(&[path]),
        "q_star": q.value,
        "c_star": cp.value,
        "chi1": chi1,
        "chi2": chi2,
        "xi1": finite(xi1),
        "xi2": finite(xi2),
        "trainable_bound": finite(bound),
        "q_iterations": q.iterations,
        "c_iterations": cp.iterations,
    }))
}
