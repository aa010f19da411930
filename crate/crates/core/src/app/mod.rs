//! Command implementations behind the `budgetseg` binary. Each command
//! returns its structured result and a human-readable rendering; the binary
//! only handles argument parsing, file output and exit codes.

pub mod scenario;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::architecture::{build_model_at, scale_channels, BlockSpecs, ModelConfig};
use crate::bilinear::{
    bilinear_upsample_reference, create_bilinear_kernels, max_interior_deviation, upsample_transposed, BankMode,
    KernelBank,
};
use crate::cost::{network_cost, CostReport, LayerSpec};
use crate::error::{Error, Result};
use crate::optimizer::{bayesian_search, exhaustive_search, SearchGrid, SearchResult};
use crate::oracle::instrumented_macs;
use crate::tensor::Tensor;

pub use scenario::{load_scenario, Accuracy, ScenarioSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Maps an error onto the process exit-code contract.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::from_json(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

/// Width-multiplier sweep over one depthwise-separable layer: depthwise
/// `kernel x kernel` on the input, then pointwise to `scale(base_depth, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidthSweep {
    pub input: TensorDims,
    pub kernel: usize,
    pub base_depth: usize,
    pub width_multipliers: Vec<f64>,
}

/// An explicit layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerList {
    pub input: crate::architecture::InputDims,
    pub layers: Vec<LayerSpec>,
}

pub enum CostSource<'a> {
    Model {
        config: &'a Path,
        block_specs: &'a Path,
        input: Option<(usize, usize)>,
    },
    Sweep(&'a Path),
    Layers(&'a Path),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub label: String,
    pub input_h: usize,
    pub input_w: usize,
    pub layers: Vec<LayerSpec>,
    pub report: CostReport,
    /// Instrumented engine total, when verification was requested.
    pub verified_macs: Option<u64>,
}

impl CostRow {
    pub fn verified(&self) -> bool {
        self.verified_macs.is_none_or(|v| v == self.report.total_macs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostOutput {
    pub rows: Vec<CostRow>,
}

impl CostOutput {
    /// JSON body: the single report, or an array for sweeps.
    pub fn to_json(&self) -> String {
        if self.rows.len() == 1 {
            serde_json::to_string_pretty(&self.rows[0].report).expect("report serializes")
        } else {
            let reports: Vec<&CostReport> = self.rows.iter().map(|r| &r.report).collect();
            serde_json::to_string_pretty(&reports).expect("reports serialize")
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.rows.len() > 1 {
            let _ = writeln!(out, "{:<22} {:>8} {:>16} {:>16}", "row", "depth", "total_macs", "verified");
            for row in &self.rows {
                let depth = row.layers.last().map_or(0, |l| l.out_filters);
                let verified = match row.verified_macs {
                    Some(v) => crate::cost::group_digits(v),
                    None => "-".into(),
                };
                let _ = writeln!(
                    out,
                    "{:<22} {:>8} {:>16} {:>16}",
                    row.label,
                    depth,
                    crate::cost::group_digits(row.report.total_macs),
                    verified
                );
            }
        } else {
            for row in &self.rows {
                let _ = writeln!(out, "{} ({}x{})", row.label, row.input_h, row.input_w);
                out.push_str(&row.report.to_table(Some(&row.layers)));
                if let Some(v) = row.verified_macs {
                    let status = if row.verified() { "match" } else { "MISMATCH" };
                    let _ = writeln!(out, "verified    {} ({status})", crate::cost::group_digits(v));
                }
            }
        }
        out
    }
}

fn cost_row(label: String, layers: Vec<LayerSpec>, h: usize, w: usize, verify: bool) -> Result<CostRow> {
    let report = network_cost(&layers, h, w)?;
    let verified_macs = if verify { Some(instrumented_macs(&layers, h, w)?) } else { None };
    Ok(CostRow {
        label,
        input_h: h,
        input_w: w,
        layers,
        report,
        verified_macs,
    })
}

/// Layers of one width-multiplier sweep row.
pub fn sweep_layers(sweep: &WidthSweep, m: f64) -> Vec<LayerSpec> {
    let depth = scale_channels(sweep.base_depth, m);
    LayerSpec::dsp_pair(sweep.kernel, 1, sweep.input.c, depth).to_vec()
}

pub fn cmd_cost(source: CostSource<'_>, verify: bool) -> Result<CostOutput> {
    let rows = match source {
        CostSource::Model {
            config,
            block_specs,
            input,
        } => {
            let cfg = ModelConfig::load(config)?;
            let specs = BlockSpecs::load(block_specs)?;
            let (h, w) = input.unwrap_or((specs.input.h, specs.input.w));
            let model = build_model_at(&specs, &cfg, h, w)?;
            let label = format!(
                "{} m={} d={} k={} n={}",
                specs.id, cfg.width_multiplier, cfg.classifier_depth, cfg.classifier_kernel, cfg.num_classes
            );
            vec![cost_row(label, model.layers, h, w, verify)?]
        }
        CostSource::Sweep(path) => {
            let sweep: WidthSweep = read_json(path)?;
            if sweep.kernel == 0 || sweep.kernel.is_multiple_of(2) {
                return Err(Error::field("kernel", "must be odd and >= 1"));
            }
            if sweep.width_multipliers.iter().any(|&m| !m.is_finite() || m <= 0.0) {
                return Err(Error::field("width_multipliers", "all multipliers must be > 0"));
            }
            sweep
                .width_multipliers
                .iter()
                .map(|&m| {
                    cost_row(
                        format!("width {m}"),
                        sweep_layers(&sweep, m),
                        sweep.input.h,
                        sweep.input.w,
                        verify,
                    )
                })
                .collect::<Result<_>>()?
        }
        CostSource::Layers(path) => {
            let list: LayerList = read_json(path)?;
            vec![cost_row(
                path.display().to_string(),
                list.layers,
                list.input.h,
                list.input.w,
                verify,
            )?]
        }
    };
    Ok(CostOutput { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMethod {
    Bayesian,
    Exhaustive,
}

/// Cost function over a backbone set at a fixed input resolution, in
/// per-image megaops.
pub fn megaops_fn(specs: &[BlockSpecs], input_h: usize, input_w: usize) -> impl Fn(&ModelConfig) -> Result<f64> + '_ {
    move |cfg: &ModelConfig| {
        let s = specs
            .iter()
            .find(|s| s.id == cfg.block_specs_id)
            .ok_or_else(|| Error::field("block_specs_id", format!("unknown backbone `{}`", cfg.block_specs_id)))?;
        let model = build_model_at(s, cfg, input_h, input_w)?;
        Ok(network_cost(&model.layers, input_h, input_w)?.megaops)
    }
}

pub fn scenario_grid(scenario: &ScenarioSpec, specs: &[BlockSpecs]) -> SearchGrid {
    SearchGrid::standard(specs.iter().map(|s| s.id.clone()).collect(), scenario.num_classes)
}

pub fn run_search(
    scenario: &ScenarioSpec,
    specs: &[BlockSpecs],
    method: SearchMethod,
    seed: u64,
) -> Result<SearchResult> {
    let grid = scenario_grid(scenario, specs);
    let cost = megaops_fn(specs, scenario.input_h, scenario.input_w);
    match method {
        SearchMethod::Bayesian => bayesian_search(&scenario.workload(), &grid, cost, seed),
        SearchMethod::Exhaustive => exhaustive_search(&scenario.workload(), &grid, cost),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutput {
    pub scenario: ScenarioSpec,
    pub result: SearchResult,
}

impl SearchOutput {
    pub fn exit_code(&self) -> i32 {
        if self.result.best.is_some() {
            EXIT_OK
        } else {
            EXIT_INFEASIBLE
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.result).expect("search result serializes")
    }

    pub fn render(&self) -> String {
        let s = &self.scenario;
        let r = &self.result;
        let mut out = String::new();
        let _ = writeln!(out, "scenario         {}", s.name);
        let _ = writeln!(out, "images/s         {}", s.images_per_second());
        let _ = writeln!(out, "budget (GOPS)    {:.2}", r.budget);
        let _ = writeln!(out, "evaluations      {}", r.trace.len());
        match (&r.best, r.gigaops, r.min_difference) {
            (Some(b), Some(g), Some(d)) => {
                let _ = writeln!(out, "backbone         {}", b.block_specs_id);
                let _ = writeln!(out, "width mult.      {}", b.width_multiplier);
                let _ = writeln!(out, "classifier depth {}", b.classifier_depth);
                let _ = writeln!(out, "classifier kern. {}", b.classifier_kernel);
                let _ = writeln!(out, "GOPS             {g:.2}");
                let _ = writeln!(out, "headroom         {d:.2}");
                let _ = writeln!(out, "utilization      {:.2}%", 100.0 * g / r.budget);
            }
            _ => {
                let _ = writeln!(out, "no configuration fits the budget");
            }
        }
        out
    }
}

pub fn cmd_search(
    scenario_path: &Path,
    specs: &[BlockSpecs],
    method: SearchMethod,
    seed: u64,
    max_iters: Option<usize>,
) -> Result<SearchOutput> {
    let mut scenario = load_scenario(scenario_path)?;
    if let Some(n) = max_iters {
        if n == 0 {
            return Err(Error::field("max_iters", "must be >= 1"));
        }
        scenario.max_iterations = n;
    }
    let result = run_search(&scenario, specs, method, seed)?;
    Ok(SearchOutput { scenario, result })
}

pub fn cmd_kernels(classes: usize, size: usize, mode: BankMode) -> Result<KernelBank> {
    create_bilinear_kernels(classes, (size, size), mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleOutput {
    pub tensor: Tensor,
    /// Max interior deviation from the gather-style reference, when checked.
    pub deviation: Option<f64>,
}

/// Upsamples through the transposed-convolution path. With `check`, compares
/// the interior against the reference interpolation (summed over input
/// channels for the full bank, since every class plane feeds every output).
pub fn cmd_upsample(input: &Tensor, factor: usize, mode: BankMode, check: bool) -> Result<UpsampleOutput> {
    let tensor = upsample_transposed(input, factor, mode)?;
    let deviation = if check {
        let reference = bilinear_upsample_reference(input, factor)?;
        let expected = match mode {
            BankMode::Diagonal => reference,
            BankMode::Full => {
                let (h, w, c) = reference.shape();
                let mut summed = Tensor::zeros(h, w, c)?;
                for y in 0..h {
                    for x in 0..w {
                        let s: f64 = (0..c).map(|ch| reference.get(y, x, ch)).sum();
                        for ch in 0..c {
                            summed.set(y, x, ch, s);
                        }
                    }
                }
                summed
            }
        };
        Some(max_interior_deviation(&tensor, &expected, input.height(), input.width(), factor)?)
    } else {
        None
    };
    Ok(UpsampleOutput { tensor, deviation })
}

/// Validates any mix of scenario, block-spec and model-config files.
pub fn cmd_validate(scenarios: &[&Path], block_specs: &[&Path], configs: &[&Path]) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for p in scenarios {
        let s = load_scenario(p)?;
        lines.push(format!("{}: scenario `{}` ok", p.display(), s.name));
    }
    for p in block_specs {
        let s = BlockSpecs::load(p)?;
        lines.push(format!("{}: block specs `{}` ok ({} entries)", p.display(), s.id, s.layers.len()));
    }
    for p in configs {
        let c = ModelConfig::load(p)?;
        lines.push(format!("{}: model config for `{}` ok", p.display(), c.block_specs_id));
    }
    Ok(lines)
}
