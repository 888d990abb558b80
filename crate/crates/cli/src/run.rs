//! Executes a [`RunConfig`]: scans, visibilities, oracle comparison and the
//! phase-locking ensemble, then writes CSV tables and a JSON summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pdcnet::dynamics::locking_ensemble;
use pdcnet::experiments::{
    reference_rate, reference_tau_visibility, scan, visibility, visibility_with_fit, Backend, Bindings, NetworkTemplate, PresetId,
    PresetParams, ScanParam, ScanRequest, ScanResult,
};
use pdcnet::fock::OracleOptions;
use pdcnet::network::{is_seeded, Observable, RateModel};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ModelChoice, NetworkSource, RunConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{context}: {source}")]
    Experiment {
        context: String,
        #[source]
        source: pdcnet::experiments::ExperimentError,
    },
    #[error("phase locking: {0}")]
    Dynamics(#[from] pdcnet::dynamics::DynamicsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} produced a non-finite value")]
    NonFinite(String),
}

fn context(what: &str) -> impl FnOnce(pdcnet::experiments::ExperimentError) -> RunError + '_ {
    move |source| RunError::Experiment { context: what.to_string(), source }
}

/// One CSV table, held in memory until every computation has finished.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    fn new(file: &str, header: Vec<&'static str>) -> Self {
        Self { file: file.to_string(), header, rows: Vec::new() }
    }

    /// Comparison table: parameter, value, reference, absolute difference.
    fn comparison(file: &str, grid: &[f64], values: &[f64], reference: &[Option<f64>]) -> Self {
        let mut t = Self::new(file, vec!["parameter", "value", "reference", "abs_diff"]);
        for ((&x, &v), &r) in grid.iter().zip(values).zip(reference) {
            t.rows.push(vec![Some(x), Some(v), r, r.map(|r| (v - r).abs())]);
        }
        t
    }

    pub fn to_csv(&self) -> Result<String, RunError> {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (k, cell) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                if let Some(v) = cell {
                    if !v.is_finite() {
                        return Err(RunError::NonFinite(self.file.clone()));
                    }
                    let _ = write!(out, "{v:.16e}");
                }
            }
            out.push('\n');
        }
        Ok(out)
    }

    fn max_abs_diff(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.get(3).copied().flatten()).reduce(f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanSummary {
    pub file: String,
    pub parameter: &'static str,
    pub unit: &'static str,
    pub points: usize,
    pub visibility: f64,
    pub r_max: f64,
    pub r_min: f64,
    pub fit_period: Option<f64>,
    pub max_reference_diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauSummary {
    pub file: String,
    pub observable: String,
    pub points: usize,
    pub max_reference_diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSummary {
    pub file: String,
    /// Largest rate difference relative to the engine's peak rate.
    pub max_relative_gap: f64,
    pub engine_visibility: f64,
    pub oracle_visibility: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemberSummary {
    pub initial_delta_theta: f64,
    pub z_lock: Option<f64>,
    pub delta_theta_limit: f64,
    pub z_growth_limit: Option<f64>,
    pub locked_before_growth_limit: bool,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub max_invariant_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseLockSummary {
    pub file: String,
    pub members: Vec<MemberSummary>,
    pub all_locked: bool,
    /// Mean limiting `Δθ` when every member ends on the same branch.
    pub common_branch: Option<f64>,
    pub max_invariant_drift: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub network: Option<String>,
    pub model: Option<&'static str>,
    pub backend: &'static str,
    pub detector: Option<String>,
    pub rate_scan: Option<ScanSummary>,
    pub coincidence_scan: Option<ScanSummary>,
    pub tau_visibility: Vec<TauSummary>,
    pub oracle: Option<OracleSummary>,
    pub phase_lock: Option<PhaseLockSummary>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub summary: Summary,
}

impl RunOutput {
    /// Writes every table and `summary.json` into `dir`, in a fixed order.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
        fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.to_path_buf(), source })?;
        let mut written = Vec::new();
        let files = self
            .tables
            .iter()
            .map(|t| Ok((t.file.clone(), t.to_csv()?)))
            .chain(std::iter::once(Ok(("summary.json".to_string(), self.summary.to_json()))))
            .collect::<Result<Vec<_>, RunError>>()?;
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| RunError::Io { path: path.clone(), source })?;
            written.push(path);
        }
        Ok(written)
    }
}

fn resolve_model(choice: ModelChoice, seeded: bool) -> RateModel {
    match choice {
        ModelChoice::Full => RateModel::Full,
        ModelChoice::Stimulated => RateModel::StimulatedLimit,
        ModelChoice::Auto if seeded => RateModel::StimulatedLimit,
        ModelChoice::Auto => RateModel::Full,
    }
}

fn model_name(m: RateModel) -> &'static str {
    match m {
        RateModel::Full => "full",
        RateModel::StimulatedLimit => "stimulated",
    }
}

fn summarize(file: &str, r: &ScanResult, table: &Table) -> Result<ScanSummary, RunError> {
    let v = visibility_with_fit(r).map_err(context(file))?;
    Ok(ScanSummary {
        file: file.to_string(),
        parameter: r.parameter.name(),
        unit: r.parameter.unit(),
        points: r.grid.len(),
        visibility: v.visibility,
        r_max: v.r_max,
        r_min: v.r_min,
        fit_period: v.fit_period,
        max_reference_diff: table.max_abs_diff(),
    })
}

struct Context<'a> {
    template: Box<dyn NetworkTemplate>,
    preset: Option<(PresetId, PresetParams)>,
    base: Bindings,
    param: ScanParam,
    grid: Vec<f64>,
    model: RateModel,
    seed_photons: f64,
    cfg: &'a RunConfig,
}

impl Context<'_> {
    fn scan(&self, observable: Observable, backend: Backend, bindings: &Bindings, param: ScanParam) -> Result<ScanResult, RunError> {
        let label = match &observable {
            Observable::Detector(d) => format!("scan of detector {d}"),
            Observable::Coincidence(a, d) => format!("coincidence scan {a},{d}"),
        };
        let request = ScanRequest { observable, model: self.model, backend };
        scan(self.template.as_ref(), bindings, param, &self.grid, &request).map_err(context(&label))
    }

    fn rate_reference(&self, x: f64) -> Option<f64> {
        let (id, p) = self.preset?;
        reference_rate(id, &p.bound(&self.param.bind(&self.base, x)), self.model)
    }

    fn tau_table(&self, file: &str, observable: Observable) -> Result<(Table, TauSummary), RunError> {
        let coincidence = matches!(observable, Observable::Coincidence(..));
        let taus = self.cfg.tau_grid.expect("tau grid present").points();
        let mut values = Vec::with_capacity(taus.len());
        let mut reference = Vec::with_capacity(taus.len());
        for &tau in &taus {
            let b = Bindings { tau, ..self.base };
            let r = self.scan(observable.clone(), Backend::default(), &b, ScanParam::Phi)?;
            values.push(visibility(&r).map_err(context(file))?.visibility);
            reference.push(match self.preset {
                Some((PresetId::FilterSetup, _)) => reference_tau_visibility(tau, self.seed_photons, coincidence, self.model),
                _ => None,
            });
        }
        let table = Table::comparison(file, &taus, &values, &reference);
        let name = match &observable {
            Observable::Detector(d) => d.clone(),
            Observable::Coincidence(a, d) => format!("{a},{d}"),
        };
        let summary = TauSummary { file: file.into(), observable: name, points: taus.len(), max_reference_diff: table.max_abs_diff() };
        Ok((table, summary))
    }
}

/// Runs every computation the configuration asks for. The result is fully
/// determined by the configuration.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let mut tables = Vec::new();
    let mut summary = Summary { backend: if cfg.oracle { "engine+oracle" } else { "engine" }, ..Summary::default() };

    if let (Some(source), Some(template)) = (&cfg.network, cfg.template()) {
        let net = cfg.base_network().expect("network present").map_err(context("network"))?;
        let seeded = is_seeded(&net);
        let model = resolve_model(cfg.model, seeded);
        let (preset, label) = match source {
            NetworkSource::Preset(id) => (Some((*id, cfg.preset_params())), id.name().to_string()),
            NetworkSource::Inline(_) => (None, "inline".to_string()),
        };
        let detector = cfg.detector.clone().unwrap_or_else(|| match source {
            NetworkSource::Preset(_) => "A".to_string(),
            NetworkSource::Inline(_) => net.detectors().next().map(|(n, _)| n.to_string()).expect("validated network has a detector"),
        });
        let seed_photons = preset.map_or(0.0, |(_, p)| p.seed_photons());
        let ctx = Context {
            template,
            preset,
            base: cfg.bindings,
            param: cfg.scan_param(),
            grid: cfg.phi_grid.points(),
            model,
            seed_photons,
            cfg,
        };
        summary.network = Some(label);
        summary.model = Some(model_name(model));
        summary.detector = Some(detector.clone());

        let rates = ctx.scan(Observable::Detector(detector.clone()), Backend::default(), &ctx.base, ctx.param)?;
        let reference: Vec<Option<f64>> = rates.grid.iter().map(|&x| ctx.rate_reference(x)).collect();
        let table = Table::comparison("rates.csv", &rates.grid, &rates.rates, &reference);
        summary.rate_scan = Some(summarize("rates.csv", &rates, &table)?);
        tables.push(table);

        if let Some((a, d)) = &cfg.coincidence {
            let r = ctx.scan(Observable::Coincidence(a.clone(), d.clone()), Backend::default(), &ctx.base, ctx.param)?;
            let table = Table::comparison("coincidence.csv", &r.grid, &r.rates, &vec![None; r.grid.len()]);
            summary.coincidence_scan = Some(summarize("coincidence.csv", &r, &table)?);
            tables.push(table);
        }

        if cfg.tau_grid.is_some() {
            let (t, s) = ctx.tau_table("tau_visibility.csv", Observable::Detector(detector.clone()))?;
            tables.push(t);
            summary.tau_visibility.push(s);
            if let Some((a, d)) = &cfg.coincidence {
                let (t, s) = ctx.tau_table("tau_visibility_coincidence.csv", Observable::Coincidence(a.clone(), d.clone()))?;
                tables.push(t);
                summary.tau_visibility.push(s);
            }
        }

        if cfg.oracle {
            let backend = Backend::Oracle(OracleOptions::default());
            let o = ctx.scan(Observable::Detector(detector), backend, &ctx.base, ctx.param)?;
            let engine: Vec<Option<f64>> = rates.rates.iter().map(|&r| Some(r)).collect();
            let table = Table::comparison("oracle.csv", &o.grid, &o.rates, &engine);
            let peak = rates.rates.iter().map(|r| r.abs()).fold(0.0, f64::max);
            let gap = table.max_abs_diff().unwrap_or(0.0);
            summary.oracle = Some(OracleSummary {
                file: "oracle.csv".into(),
                max_relative_gap: if peak > 0.0 { gap / peak } else { gap },
                engine_visibility: visibility(&rates).map_err(context("engine visibility"))?.visibility,
                oracle_visibility: visibility(&o).map_err(context("oracle visibility"))?.visibility,
            });
            tables.push(table);
        }
    }

    if let Some(pl) = &cfg.phase_lock {
        let members = locking_ensemble(&pl.settings())?;
        let mut table = Table::new(
            "phase_lock.csv",
            vec!["initial_delta_theta", "z_lock", "delta_theta_limit", "z_growth_limit", "max_invariant_drift"],
        );
        let members: Vec<MemberSummary> = members
            .iter()
            .map(|m| MemberSummary {
                initial_delta_theta: m.initial_delta_theta,
                z_lock: m.lock.z_lock,
                delta_theta_limit: m.lock.delta_theta_limit,
                z_growth_limit: m.z_growth_limit,
                locked_before_growth_limit: m.locked_before_growth_limit(),
                accepted_steps: m.stats.accepted_steps,
                rejected_steps: m.stats.rejected_steps,
                max_invariant_drift: m.stats.max_invariant_drift.0.max(m.stats.max_invariant_drift.1),
            })
            .collect();
        for m in &members {
            table.rows.push(vec![
                Some(m.initial_delta_theta),
                m.z_lock,
                Some(m.delta_theta_limit),
                m.z_growth_limit,
                Some(m.max_invariant_drift),
            ]);
        }
        let first = members[0].delta_theta_limit;
        let same = members.iter().all(|m| (m.delta_theta_limit - first).abs() < 10.0 * pl.epsilon);
        summary.phase_lock = Some(PhaseLockSummary {
            file: "phase_lock.csv".into(),
            all_locked: members.iter().all(|m| m.locked_before_growth_limit),
            common_branch: same.then(|| members.iter().map(|m| m.delta_theta_limit).sum::<f64>() / members.len() as f64),
            max_invariant_drift: members.iter().map(|m| m.max_invariant_drift).fold(0.0, f64::max),
            members,
        });
        tables.push(table);
    }

    Ok(RunOutput { tables, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_fixed_precision_and_blank_missing_cells() {
        let t = Table::comparison("t.csv", &[0.0, 0.5], &[1.0, 2.0], &[Some(1.0), None]);
        let csv = t.to_csv().unwrap();
        assert_eq!(
            csv,
            "parameter,value,reference,abs_diff\n\
             0.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0,0.0000000000000000e0\n\
             5.0000000000000000e-1,2.0000000000000000e0,,\n"
        );
    }

    #[test]
    fn non_finite_cells_are_refused() {
        let t = Table::comparison("t.csv", &[0.0], &[f64::NAN], &[None]);
        assert!(matches!(t.to_csv(), Err(RunError::NonFinite(_))));
    }

    #[test]
    fn auto_model_follows_seeding() {
        assert_eq!(resolve_model(ModelChoice::Auto, true), RateModel::StimulatedLimit);
        assert_eq!(resolve_model(ModelChoice::Auto, false), RateModel::Full);
        assert_eq!(resolve_model(ModelChoice::Full, true), RateModel::Full);
    }
}
