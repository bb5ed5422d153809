use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use lossforge::circle::{fit_hanger, internal_q};
use lossforge::domain::{FrequencyTrace, HangerFit, HangerParams, ModeRecord};
use lossforge::extraction::{self, LossBudget, LossFactorSet};
use lossforge::io::{self, LoadedTrace, TraceSidecar};
use lossforge::par;
use lossforge::participation::{FactorModel, ParticipationMatrix};
use lossforge::photon::{mean_photon_number, LineBudget};
use lossforge::pipeline::{sweep_from_points, ModeSweep, PowerPoint};
use lossforge::prediction::{self, Library, MeasuredT1};
use lossforge::sensitivity::{sensitivity_map_with, AxisSpec, SensitivityMap, DEFAULT_MEAS_FRACTIONAL_SIGMA};
use lossforge::sweep::{phase_gap_metric, plan_csv, plan_linear, plan_phase_uniform, plan_quadratic, segment_table, Scheme};
use lossforge::synth::{generate_dataset_with, DatasetTruth, OperatingPoint};

use crate::error::{CliError, Result};
use crate::plot;
use crate::run::Run;

fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing --{flag} (flag or config key)")))
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| CliError::Validation(format!("csv: {e}"));
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(&r).map_err(io_err)?;
    }
    w.into_inner().map_err(|e| CliError::Validation(format!("csv: {e}")))
}

fn read_matrix(run: &mut Run, path: &Path) -> Result<ParticipationMatrix> {
    run.read_json(path)
}

fn read_fixed(run: &mut Run, path: Option<&Path>) -> Result<BTreeMap<String, FactorModel>> {
    match path {
        Some(p) => run.read_json(p),
        None => Ok(BTreeMap::new()),
    }
}

fn read_modes(run: &mut Run, path: &Path) -> Result<Vec<ModeRecord>> {
    let text = run.read_text(path)?;
    io::parse_modes_csv(&text).map_err(CliError::within(path.display()))
}

/// Trace files named directly or found in the given directories.
fn load_traces(run: &mut Run, inputs: &[PathBuf], budget: Option<&LineBudget>) -> Result<Vec<LoadedTrace>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            files.extend(io::trace_files(p).map_err(CliError::within(p.display()))?);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Usage("no trace files given".into()));
    }
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        run.track(&f)?;
        let side = io::sidecar_path(&f);
        if side.exists() {
            run.track(&side)?;
        }
        out.push(io::load_trace(&f, budget).map_err(CliError::within(f.display()))?);
    }
    Ok(out)
}

fn read_line_budget(run: &mut Run, path: Option<&Path>) -> Result<Option<LineBudget>> {
    let Some(p) = path else { return Ok(None) };
    let b: LineBudget = run.read_json(p)?;
    b.validate().map_err(CliError::within(p.display()))?;
    Ok(Some(b))
}

fn budget_rows(b: &LossBudget) -> Vec<Vec<String>> {
    b.modes
        .iter()
        .flat_map(|m| {
            m.channels.iter().map(move |(id, c)| {
                vec![m.mode_id.clone(), num(m.frequency), id.clone(), num(c.loss), num(c.fraction)]
            })
        })
        .collect()
}

fn write_budget(run: &mut Run, b: &LossBudget, title: &str) -> Result<()> {
    run.write_json("budget.json", b)?;
    run.write(
        "budget.csv",
        table(&["mode_id", "frequency_hz", "channel", "loss", "fraction"], budget_rows(b))?,
    )?;
    if run.plot {
        run.write("budget.svg", plot::budget(b, title)?)?;
    }
    Ok(())
}

fn print_budget(b: &LossBudget) {
    for m in &b.modes {
        let shares: Vec<String> = m
            .channels
            .iter()
            .map(|(id, c)| format!("{id} {:.1}%", 100.0 * c.fraction))
            .collect();
        println!("{:<10} Q = {:.4e}   {}", m.mode_id, 1.0 / m.total_loss, shares.join(", "));
    }
}

// ---------------------------------------------------------------- fit

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FitArgs {
    /// Trace CSV files.
    pub traces: Vec<PathBuf>,
    /// Line budget JSON for sidecars without line_attenuation_db.
    #[arg(long)]
    pub line_budget: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct TraceFitReport {
    source: String,
    label: String,
    #[serde(flatten)]
    fit: HangerFit,
    q_coupling_effective: f64,
    q_int: f64,
    q_int_sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    power_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    photon_number: Option<f64>,
}

fn fit_one(t: &FrequencyTrace) -> lossforge::Result<(HangerFit, f64, f64, Option<f64>)> {
    let fit = fit_hanger(t)?;
    let (q, s) = internal_q(&fit)?;
    let n = match t.drive_power_at_device() {
        Some(p) => {
            let h = &fit.params;
            Some(mean_photon_number(p, h.fr, h.fr, h.q_loaded, h.q_coupling_effective())?)
        }
        None => None,
    };
    Ok((fit, q, s, n))
}

pub fn fit(run: &mut Run, a: FitArgs) -> Result<()> {
    if a.traces.is_empty() {
        return Err(CliError::Usage("fit needs at least one trace file".into()));
    }
    let budget = read_line_budget(run, a.line_budget.as_deref())?;
    let traces = load_traces(run, &a.traces, budget.as_ref())?;
    let results = par::map(run.exec, &traces, |t| fit_one(&t.trace));
    let mut reports = Vec::with_capacity(traces.len());
    for (t, r) in traces.iter().zip(results) {
        let (fit, q_int, q_int_sigma, photon_number) = r.map_err(CliError::within(t.path.display()))?;
        reports.push(TraceFitReport {
            source: t.path.display().to_string(),
            label: t.trace.label().to_string(),
            q_coupling_effective: fit.params.q_coupling_effective(),
            fit,
            q_int,
            q_int_sigma,
            power_w: t.trace.drive_power_at_device(),
            photon_number,
        });
    }
    run.write_json("fit.json", &reports)?;
    let header = [
        "source", "label", "fr", "fr_sigma", "q_loaded", "q_loaded_sigma", "q_coupling_mag", "q_coupling_mag_sigma", "phi",
        "phi_sigma", "amplitude_a", "amplitude_a_sigma", "alpha", "alpha_sigma", "tau", "tau_sigma", "q_int", "q_int_sigma",
        "photon_number",
    ];
    let rows = reports.iter().map(|r| {
        let (p, s) = (&r.fit.params, &r.fit.sigma);
        let mut row = vec![r.source.clone(), r.label.clone()];
        for (v, e) in [
            (p.fr, s.fr),
            (p.q_loaded, s.q_loaded),
            (p.q_coupling_mag, s.q_coupling_mag),
            (p.phi, s.phi),
            (p.amplitude_a, s.amplitude_a),
            (p.alpha, s.alpha),
            (p.tau, s.tau),
        ] {
            row.push(num(v));
            row.push(num(e));
        }
        row.push(num(r.q_int));
        row.push(num(r.q_int_sigma));
        row.push(r.photon_number.map_or(String::new(), num));
        row
    });
    run.write("fit.csv", table(&header, rows)?)?;
    if run.plot {
        for (t, r) in traces.iter().zip(&reports) {
            let stem = t.path.file_stem().map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned());
            run.write(&format!("fit_{stem}.svg"), plot::hanger_fit(&t.trace, &r.fit.params)?)?;
        }
    }
    for r in &reports {
        let p = &r.fit.params;
        println!(
            "{}: fr = {:.6} GHz, Q_L = {:.4e}, |Q_c| = {:.4e}, phi = {:.4}, Q_int = {:.4e} +- {:.2e}",
            r.label,
            p.fr / 1e9,
            p.q_loaded,
            p.q_coupling_mag,
            p.phi,
            r.q_int,
            r.q_int_sigma
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- power-sweep

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PowerSweepArgs {
    /// Directories of traces (every *.csv) or individual trace files.
    pub inputs: Vec<PathBuf>,
    /// Line budget JSON for sidecars without line_attenuation_db.
    #[arg(long)]
    pub line_budget: Option<PathBuf>,
    /// Photon number at which to report Q_int (default 1).
    #[arg(long)]
    pub photon_number: Option<f64>,
}

pub fn power_sweep(run: &mut Run, a: PowerSweepArgs) -> Result<()> {
    if a.inputs.is_empty() {
        return Err(CliError::Usage("power-sweep needs a trace directory or trace files".into()));
    }
    let n_report = a.photon_number.unwrap_or(1.0);
    let budget = read_line_budget(run, a.line_budget.as_deref())?;
    let traces = load_traces(run, &a.inputs, budget.as_ref())?;
    let analyzed = par::map(run.exec, &traces, |t| lossforge::pipeline::analyze_trace(&t.trace));
    let mut by_mode: BTreeMap<String, Vec<PowerPoint>> = BTreeMap::new();
    for (t, r) in traces.iter().zip(analyzed) {
        let point = r.map_err(CliError::within(t.path.display()))?;
        by_mode.entry(t.mode_id()).or_default().push(point);
    }
    let mut sweeps: Vec<ModeSweep> = Vec::with_capacity(by_mode.len());
    for (id, mut points) in by_mode {
        points.sort_by(|x, y| x.power.total_cmp(&y.power));
        sweeps.push(sweep_from_points(&id, points).map_err(CliError::within(format!("mode '{id}'")))?);
    }
    let records = sweeps
        .iter()
        .map(|s| s.record_at(n_report).map_err(CliError::within(format!("mode '{}'", s.mode_id))))
        .collect::<Result<Vec<_>>>()?;

    run.write_json("sweeps.json", &sweeps)?;
    let point_rows = sweeps.iter().flat_map(|s| {
        s.points.iter().map(move |p| {
            vec![
                s.mode_id.clone(),
                p.label.clone(),
                num(p.power),
                num(p.photon_number),
                num(p.q_int),
                num(p.q_int_sigma),
                num(p.fit.params.fr),
                num(p.fit.params.q_loaded),
                num(p.fit.params.q_coupling_mag),
                num(p.fit.params.phi),
            ]
        })
    });
    run.write(
        "points.csv",
        table(
            &[
                "mode_id", "label", "power_w", "photon_number", "q_int", "q_int_sigma", "fr", "q_loaded", "q_coupling_mag", "phi",
            ],
            point_rows,
        )?,
    )?;
    let tls_rows = sweeps.iter().map(|s| {
        let (p, e) = (&s.tls.params, &s.tls.sigma);
        vec![
            s.mode_id.clone(),
            num(s.frequency),
            num(p.q0_inv),
            num(e.q0_inv),
            num(p.tls_amplitude),
            num(e.tls_amplitude),
            num(p.n_critical),
            num(e.n_critical),
            num(p.beta),
            num(e.beta),
            num(s.tls.chi2),
            s.tls.saturation_unresolved.to_string(),
        ]
    });
    run.write(
        "tls.csv",
        table(
            &[
                "mode_id",
                "frequency_hz",
                "q0_inv",
                "q0_inv_sigma",
                "tls_amplitude",
                "tls_amplitude_sigma",
                "n_critical",
                "n_critical_sigma",
                "beta",
                "beta_sigma",
                "chi2",
                "saturation_unresolved",
            ],
            tls_rows,
        )?,
    )?;
    run.write("modes.csv", io::modes_to_csv(&records))?;
    if run.plot {
        run.write("q_vs_n.svg", plot::q_vs_photon_number(&sweeps)?)?;
    }
    for (s, r) in sweeps.iter().zip(&records) {
        println!(
            "{:<10} {} traces, Q_int(n={n_report}) = {:.4e} +- {:.2e}, n_c = {:.3e}, beta = {:.3}",
            s.mode_id,
            s.points.len(),
            r.q_int,
            r.q_int_sigma,
            s.tls.params.n_critical,
            s.tls.params.beta
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- extract

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExtractArgs {
    /// Participation matrix JSON.
    #[arg(long)]
    pub participations: Option<PathBuf>,
    /// Mode table CSV (mode_id,frequency_hz,q_int,q_int_sigma[,photon_number]).
    #[arg(long)]
    pub modes: Option<PathBuf>,
    /// Channels held at known values, JSON map of channel id to factor.
    #[arg(long)]
    pub fixed: Option<PathBuf>,
}

pub fn extract(run: &mut Run, a: ExtractArgs) -> Result<()> {
    let m = read_matrix(run, &require(a.participations, "participations")?)?;
    let modes = read_modes(run, &require(a.modes, "modes")?)?;
    let fixed = read_fixed(run, a.fixed.as_deref())?;
    let mut set = extraction::extract(&m, &modes, &fixed)?;
    let first = modes.first().and_then(|r| r.photon_number);
    if modes.iter().all(|r| r.photon_number == first) {
        set.photon_number = first;
    }
    let b = extraction::budget(&m, &set)?;
    run.write_json("factors.json", &set)?;
    let rows = set.free_channels.iter().map(|id| {
        let f = &set.factors[id];
        vec![id.clone(), num(f.value), num(f.sigma), f.consistent_with_zero.to_string()]
    });
    run.write("factors.csv", table(&["channel", "value", "sigma", "consistent_with_zero"], rows)?)?;
    write_budget(run, &b, "Loss budget from extracted factors")?;
    for id in &set.free_channels {
        let f = &set.factors[id];
        let flag = if f.consistent_with_zero { "  (consistent with zero)" } else { "" };
        println!("{id:<12} {:.4e} +- {:.2e}{flag}", f.value, f.sigma);
    }
    print_budget(&b);
    Ok(())
}

// ---------------------------------------------------------------- sensitivity

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SensitivityArgs {
    /// Participation matrix JSON.
    #[arg(long)]
    pub participations: Option<PathBuf>,
    /// The two swept channels, "x,y" (e.g. surf,bulk).
    #[arg(long)]
    pub axes: Option<String>,
    /// Channels held at known values, JSON map of channel id to factor.
    #[arg(long)]
    pub fixed: Option<PathBuf>,
    /// x-axis range "min:max" (default depends on the channel).
    #[arg(long)]
    pub x_range: Option<String>,
    /// y-axis range "min:max".
    #[arg(long)]
    pub y_range: Option<String>,
    /// Grid points per axis (default 64).
    #[arg(long)]
    pub points: Option<usize>,
    /// Fractional uncertainty of each measured Q (default 0.1).
    #[arg(long)]
    pub meas_sigma: Option<f64>,
}

fn axis(channel: &str, range: Option<&str>, points: Option<usize>) -> Result<AxisSpec> {
    let mut a = AxisSpec::default_for(channel);
    if let Some(r) = range {
        let (lo, hi) = r
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("range '{r}' must be 'min:max'")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("'{s}' in range '{r}' is not a number")))
        };
        a.min = parse(lo)?;
        a.max = parse(hi)?;
    }
    if let Some(n) = points {
        a.points = n;
    }
    Ok(a)
}

#[derive(Serialize)]
struct SensitivityReport<'a> {
    floor_x: Option<f64>,
    floor_y: Option<f64>,
    #[serde(flatten)]
    map: &'a SensitivityMap,
}

pub fn sensitivity(run: &mut Run, a: SensitivityArgs) -> Result<()> {
    let m = read_matrix(run, &require(a.participations, "participations")?)?;
    let axes = require(a.axes, "axes")?;
    let (xc, yc) = axes
        .split_once(',')
        .ok_or_else(|| CliError::Usage(format!("--axes '{axes}' must name two channels, e.g. surf,bulk")))?;
    let x = axis(xc.trim(), a.x_range.as_deref(), a.points)?;
    let y = axis(yc.trim(), a.y_range.as_deref(), a.points)?;
    let fixed = read_fixed(run, a.fixed.as_deref())?;
    let sigma = a.meas_sigma.unwrap_or(DEFAULT_MEAS_FRACTIONAL_SIGMA);
    let map = sensitivity_map_with(run.exec, &m, &fixed, &x, &y, sigma)?;
    let report = SensitivityReport {
        floor_x: map.floor_x(),
        floor_y: map.floor_y(),
        map: &map,
    };
    run.write_json("sensitivity.json", &report)?;
    let mut rows = Vec::new();
    for (iy, yv) in map.y_values.iter().enumerate() {
        for (ix, xv) in map.x_values.iter().enumerate() {
            rows.push(vec![
                num(*xv),
                num(*yv),
                num(map.fractional_error_x[iy][ix]),
                num(map.fractional_error_y[iy][ix]),
                map.resolvable_x[iy][ix].to_string(),
                map.resolvable_y[iy][ix].to_string(),
            ]);
        }
    }
    run.write(
        "sensitivity.csv",
        table(
            &[
                &format!("{}_factor", x.channel),
                &format!("{}_factor", y.channel),
                "fractional_error_x",
                "fractional_error_y",
                "resolvable_x",
                "resolvable_y",
            ],
            rows,
        )?,
    )?;
    if run.plot {
        run.write("sensitivity.svg", plot::sensitivity(&map)?)?;
    }
    let show = |v: Option<f64>| v.map_or_else(|| "not resolvable on this grid".to_string(), |v| format!("{v:.3e}"));
    println!("smallest resolvable {}: {}", x.channel, show(report.floor_x));
    println!("smallest resolvable {}: {}", y.channel, show(report.floor_y));
    Ok(())
}

// ---------------------------------------------------------------- predict

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PredictArgs {
    /// Participation matrix JSON.
    #[arg(long)]
    pub participations: Option<PathBuf>,
    /// Loss-factor library JSON.
    #[arg(long)]
    pub library: Option<PathBuf>,
    /// Measured T1 values to compare against, JSON list.
    #[arg(long)]
    pub measured: Option<PathBuf>,
}

/// A measured T1 with the coupling Q of its readout, if any.
#[derive(Debug, Deserialize)]
struct MeasuredEntry {
    #[serde(flatten)]
    t1: MeasuredT1,
    #[serde(default)]
    q_coupling: Option<f64>,
}

pub fn predict(run: &mut Run, a: PredictArgs) -> Result<()> {
    let m = read_matrix(run, &require(a.participations, "participations")?)?;
    let lib: Library = run.read_json(&require(a.library, "library")?)?;
    let p = prediction::predict(&m, &lib)?;
    run.write_json("prediction.json", &p)?;
    let rows = p.modes.iter().map(|mp| {
        vec![
            mp.mode_id.clone(),
            num(mp.frequency),
            num(mp.q_int_predicted),
            num(mp.sigma),
            num(mp.t1_predicted),
            num(mp.t1_sigma),
        ]
    });
    run.write(
        "prediction.csv",
        table(&["mode_id", "frequency_hz", "q_int", "q_int_sigma", "t1_s", "t1_sigma_s"], rows)?,
    )?;
    write_budget(run, &p.budget, "Predicted loss budget")?;
    for mp in &p.modes {
        println!(
            "{:<10} {:.3} GHz  Q_int = {:.4e} +- {:.2e}  T1 = {:.4e} s +- {:.2e} s",
            mp.mode_id,
            mp.frequency / 1e9,
            mp.q_int_predicted,
            mp.sigma,
            mp.t1_predicted,
            mp.t1_sigma
        );
    }
    if let Some(path) = a.measured {
        let measured: Vec<MeasuredEntry> = run.read_json(&path)?;
        let mut comparisons = Vec::with_capacity(measured.len());
        for e in &measured {
            let mp = p
                .modes
                .iter()
                .find(|mp| mp.mode_id == e.t1.mode_id)
                .ok_or_else(|| CliError::Validation(format!("{}: mode '{}' is not predicted", path.display(), e.t1.mode_id)))?;
            let c = prediction::compare_measured(mp, &e.t1, e.q_coupling.unwrap_or(f64::INFINITY))
                .map_err(CliError::within(format!("mode '{}'", e.t1.mode_id)))?;
            println!(
                "{:<10} measured Q_int = {:.4e} +- {:.2e}, z = {:+.2}",
                c.mode_id, c.q_int_measured, c.q_int_measured_sigma, c.z_score
            );
            comparisons.push(c);
        }
        run.write_json("comparison.json", &comparisons)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- plan-sweep

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PlanSweepArgs {
    /// Center frequency, Hz.
    #[arg(long)]
    pub center: Option<f64>,
    /// Total span, Hz.
    #[arg(long)]
    pub span: Option<f64>,
    /// Span in loaded linewidths, W = span Q_L / center (default 5).
    #[arg(long)]
    pub weight: Option<f64>,
    /// Number of points, odd for symmetric schemes (default 101).
    #[arg(long)]
    pub points: Option<usize>,
    /// linear, quadratic or phase-uniform (default phase-uniform).
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Serialize)]
struct PlanReport<'a> {
    #[serde(flatten)]
    plan: &'a lossforge::sweep::SweepPlan,
    /// Loaded Q implied by the weight, used for the phase metrics.
    q_loaded: f64,
    max_phase_gap_rad: f64,
    linear_max_phase_gap_rad: f64,
}

pub fn plan_sweep(run: &mut Run, a: PlanSweepArgs) -> Result<()> {
    let center = require(a.center, "center")?;
    let span = require(a.span, "span")?;
    let weight = a.weight.unwrap_or(5.0);
    let n = a.points.unwrap_or(101);
    let scheme: Scheme = a
        .scheme
        .as_deref()
        .unwrap_or("phase-uniform")
        .parse()
        .map_err(|e: lossforge::Error| CliError::Usage(e.to_string()))?;
    let plan = match scheme {
        Scheme::PhaseUniform => plan_phase_uniform(center, span, weight, n)?,
        Scheme::Quadratic => plan_quadratic(center, span, n)?,
        Scheme::Linear => plan_linear(center, span, n)?,
    };
    let q_loaded = weight * center / span;
    let report = PlanReport {
        plan: &plan,
        q_loaded,
        max_phase_gap_rad: phase_gap_metric(&plan, q_loaded)?,
        linear_max_phase_gap_rad: phase_gap_metric(&plan_linear(center, span, n)?, q_loaded)?,
    };
    run.write("plan.csv", plan_csv(&plan))?;
    run.write("segments.tsv", segment_table(&plan))?;
    run.write_json("plan.json", &report)?;
    if run.plot {
        run.write("plan.svg", plot::sweep_plan(&plan, q_loaded)?)?;
    }
    println!(
        "{n} points over {:.6e} Hz around {:.9e} Hz; max phase gap {:.4} rad (linear {:.4} rad)",
        span, center, report.max_phase_gap_rad, report.linear_max_phase_gap_rad
    );
    Ok(())
}

// ---------------------------------------------------------------- simulate

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// Ground-truth JSON (dataset truth plus "participations", inline or a path).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixSource {
    Path(PathBuf),
    Inline(ParticipationMatrix),
}

#[derive(Debug, Deserialize)]
struct SimulationFile {
    participations: MatrixSource,
    #[serde(flatten)]
    truth: DatasetTruth,
}

#[derive(Serialize)]
struct SimulatedEntry<'a> {
    file: String,
    label: &'a str,
    mode_id: &'a str,
    power_dbm: f64,
    params: &'a HangerParams,
    operating_point: &'a OperatingPoint,
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn simulate(run: &mut Run, a: SimulateArgs) -> Result<()> {
    let path = require(a.truth, "truth")?;
    let file: SimulationFile = run.read_json(&path)?;
    let matrix = match file.participations {
        MatrixSource::Inline(m) => m,
        MatrixSource::Path(p) => {
            let p = if p.is_relative() { path.parent().unwrap_or(Path::new(".")).join(p) } else { p };
            read_matrix(run, &p)?
        }
    };
    let data = generate_dataset_with(run.exec, &file.truth, &matrix)?;
    let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
    let mut entries = Vec::with_capacity(data.len());
    for d in &data {
        let k = counters.entry(&d.mode_id).or_default();
        let name = format!("{}_{:03}", file_safe(&d.mode_id), k);
        *k += 1;
        run.write(&format!("{name}.csv"), io::trace_to_csv(&d.trace))?;
        let sidecar = TraceSidecar {
            label: d.trace.label().to_string(),
            power_dbm_at_vna: d.power_dbm,
            line_attenuation_db: Some(0.0),
            mode_id: Some(d.mode_id.clone()),
        };
        run.write_json(&format!("{name}.json"), &sidecar)?;
        entries.push(SimulatedEntry {
            file: format!("{name}.csv"),
            label: d.trace.label(),
            mode_id: &d.mode_id,
            power_dbm: d.power_dbm,
            params: &d.params,
            operating_point: &d.operating_point,
        });
    }
    run.write_json("simulation.json", &entries)?;
    if run.plot {
        eprintln!("note: simulate has no plot; run fit or power-sweep on its output");
    }
    println!(
        "{} traces for {} modes at {} powers (seed {})",
        data.len(),
        matrix.modes().len(),
        file.truth.powers_dbm.len(),
        file.truth.seed
    );
    Ok(())
}

// ---------------------------------------------------------------- budget

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BudgetArgs {
    /// Participation matrix JSON.
    #[arg(long)]
    pub participations: Option<PathBuf>,
    /// Extracted factors (factors.json written by extract).
    #[arg(long, conflicts_with = "library")]
    pub factors: Option<PathBuf>,
    /// Loss-factor library JSON.
    #[arg(long)]
    pub library: Option<PathBuf>,
}

pub fn budget(run: &mut Run, a: BudgetArgs) -> Result<()> {
    let m = read_matrix(run, &require(a.participations, "participations")?)?;
    let b = match (a.factors, a.library) {
        (Some(f), None) => {
            let set: LossFactorSet = run.read_json(&f)?;
            extraction::budget(&m, &set)?
        }
        (None, Some(l)) => {
            let lib: Library = run.read_json(&l)?;
            extraction::budget_with(&m, |id, f| lib.get(id).map(|e| e.factor.at(f).0))?
        }
        _ => return Err(CliError::Usage("budget needs exactly one of --factors or --library".into())),
    };
    write_budget(run, &b, "Loss budget")?;
    print_budget(&b);
    Ok(())
}
