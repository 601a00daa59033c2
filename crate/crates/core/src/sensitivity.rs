//! Morris elementary-effects screening: trajectories on a p-level grid,
//! spread-maximizing selection, effects and their summary statistics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::SensitivityError;
use crate::params::{parse_quantity, spec, SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "kebab-case")]
pub enum Distribution {
    Uniform { a: f64, b: f64 },
    LogUniform { a: f64, b: f64 },
}

impl Distribution {
    /// Maps a point of `[0, 1]` to the physical value.
    pub fn map(&self, u: f64) -> f64 {
        match *self {
            Distribution::Uniform { a, b } => {
                if u == 1.0 {
                    b
                } else {
                    a + u * (b - a)
                }
            }
            Distribution::LogUniform { a, b } => {
                if u == 0.0 {
                    a
                } else if u == 1.0 {
                    b
                } else {
                    (a.ln() + u * (b.ln() - a.ln())).exp()
                }
            }
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            Distribution::Uniform { a, b } | Distribution::LogUniform { a, b } => (a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Input {
    pub name: String,
    #[serde(flatten)]
    pub dist: Distribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSpace {
    pub inputs: Vec<Input>,
    /// Number of grid levels.
    pub p: usize,
    /// Output times in hours; empty means the final time only.
    pub report_times: Vec<f64>,
}

/// Inputs varied in the first screening, with log-uniform sampling for the
/// permeability ranges that span orders of magnitude.
pub const DEFAULT_INPUTS: [&str; 9] = [
    "gamma",
    "c_ref",
    "vegf_rate",
    "sigma_tilde",
    "tau",
    "r_p",
    "r_c",
    "kappa",
    "m_c",
];
const LOG_INPUTS: [&str; 3] = ["r_p", "r_c", "kappa"];

fn space_err(msg: impl Into<String>) -> SensitivityError {
    SensitivityError::Space(msg.into())
}

impl InputSpace {
    pub fn new(inputs: Vec<Input>, p: usize) -> Result<Self, SensitivityError> {
        if p < 2 || p % 2 != 0 {
            return Err(space_err(format!("levels must be even and at least 2, got {p}")));
        }
        if inputs.is_empty() {
            return Err(space_err("no inputs"));
        }
        for (i, inp) in inputs.iter().enumerate() {
            if inputs[..i].iter().any(|o| o.name == inp.name) {
                return Err(space_err(format!("input `{}` listed twice", inp.name)));
            }
            let (a, b) = inp.dist.bounds();
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(space_err(format!("input `{}`: bounds must satisfy a < b", inp.name)));
            }
            if matches!(inp.dist, Distribution::LogUniform { .. }) && a <= 0.0 {
                return Err(space_err(format!("input `{}`: log-uniform bounds must be positive", inp.name)));
            }
        }
        Ok(Self {
            inputs,
            p,
            report_times: Vec::new(),
        })
    }

    /// Documented ranges of the parameters in [`DEFAULT_INPUTS`].
    pub fn default_space() -> Self {
        let inputs = DEFAULT_INPUTS
            .iter()
            .map(|&k| {
                let (a, b) = spec(k).and_then(|s| s.range).expect("documented range");
                let dist = if LOG_INPUTS.contains(&k) {
                    Distribution::LogUniform { a, b }
                } else {
                    Distribution::Uniform { a, b }
                };
                Input { name: k.to_string(), dist }
            })
            .collect();
        Self::new(inputs, 4).expect("default space is valid")
    }

    pub fn k(&self) -> usize {
        self.inputs.len()
    }

    /// Grid step `p / (2(p − 1))`.
    pub fn delta(&self) -> f64 {
        self.p as f64 / (2.0 * (self.p as f64 - 1.0))
    }

    pub fn level(&self, j: usize) -> f64 {
        j as f64 / (self.p - 1) as f64
    }

    /// Physical values of a point of the unit cube.
    pub fn map(&self, u: &[f64]) -> Vec<(String, f64)> {
        self.inputs.iter().zip(u).map(|(i, &u)| (i.name.clone(), i.dist.map(u))).collect()
    }

    /// Parses a space file:
    ///
    /// ```toml
    /// levels = 4
    /// report_times = ["7 d", "14 d", "21 d"]
    /// [[input]]
    /// name = "kappa"
    /// distribution = "log-uniform"
    /// bounds = ["1e-12 mm2", "1e-7 mm2"]
    /// ```
    ///
    /// Inputs given only by name take their documented range.
    pub fn parse(text: &str) -> Result<Self, SensitivityError> {
        let t: Table = text.parse().map_err(|e: toml::de::Error| space_err(e.to_string()))?;
        for k in t.keys() {
            if !["levels", "report_times", "input"].contains(&k.as_str()) {
                return Err(space_err(format!("unknown key `{k}` (known keys: levels, report_times, input)")));
            }
        }
        let p = match t.get("levels") {
            None => 4,
            Some(v) => v.as_integer().filter(|&i| i > 0).ok_or_else(|| space_err("`levels` must be a positive integer"))?
                as usize,
        };
        let quantity = |name: &str, v: &Value, dim| -> Result<f64, SensitivityError> {
            match v {
                Value::Float(f) => Ok(*f),
                Value::Integer(i) => Ok(*i as f64),
                Value::String(s) => parse_quantity(s, dim).map_err(|m| space_err(format!("{name}: {m}"))),
                _ => Err(space_err(format!("{name}: expected a number or a \"value unit\" string"))),
            }
        };
        let mut inputs = Vec::new();
        let list = match t.get("input") {
            None => return Err(space_err("no [[input]] entries")),
            Some(Value::Array(a)) => a.clone(),
            Some(_) => return Err(space_err("`input` must be an array of tables")),
        };
        for entry in &list {
            let e = entry.as_table().ok_or_else(|| space_err("`input` entries must be tables"))?;
            for k in e.keys() {
                if !["name", "distribution", "bounds"].contains(&k.as_str()) {
                    return Err(space_err(format!("unknown input key `{k}` (known keys: name, distribution, bounds)")));
                }
            }
            let name = e
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| space_err("input without a `name`"))?
                .to_string();
            let ps = spec(&name);
            let dim = ps.map(|s| s.dim).unwrap_or(crate::params::Dim::None);
            let (a, b) = match e.get("bounds") {
                Some(Value::Array(v)) if v.len() == 2 => (quantity(&name, &v[0], dim)?, quantity(&name, &v[1], dim)?),
                Some(_) => return Err(space_err(format!("{name}: `bounds` must be a two-element array"))),
                None => ps
                    .and_then(|s| s.range)
                    .ok_or_else(|| space_err(format!("{name}: no bounds given and no documented range")))?,
            };
            let dist = match e.get("distribution").map(|v| v.as_str()) {
                None => {
                    if LOG_INPUTS.contains(&name.as_str()) {
                        Distribution::LogUniform { a, b }
                    } else {
                        Distribution::Uniform { a, b }
                    }
                }
                Some(Some("uniform")) => Distribution::Uniform { a, b },
                Some(Some("log-uniform")) => Distribution::LogUniform { a, b },
                Some(other) => {
                    return Err(space_err(format!(
                        "{name}: unknown distribution {:?} (uniform or log-uniform)",
                        other.unwrap_or("<non-string>")
                    )))
                }
            };
            inputs.push(Input { name, dist });
        }
        let mut space = Self::new(inputs, p)?;
        if let Some(v) = t.get("report_times") {
            let a = v.as_array().ok_or_else(|| space_err("`report_times` must be an array"))?;
            space.report_times = a
                .iter()
                .map(|v| quantity("report_times", v, crate::params::Dim::Time))
                .collect::<Result<_, _>>()?;
        }
        Ok(space)
    }

    pub fn load(path: &Path) -> Result<Self, SensitivityError> {
        let text = std::fs::read_to_string(path).map_err(|source| SensitivityError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Checks that every input names a model parameter.
    pub fn check_parameters(&self) -> Result<(), SensitivityError> {
        for i in &self.inputs {
            if spec(&i.name).is_none() {
                let known: Vec<&str> = SCHEMA.iter().map(|s| s.key).collect();
                return Err(space_err(format!("`{}` is not a model parameter (known: {})", i.name, known.join(", "))));
            }
        }
        Ok(())
    }
}

/// `K + 1` grid points, consecutive ones differing in one coordinate by `±Δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Vec<f64>>,
    /// Input varied at each step and its sign.
    pub steps: Vec<(usize, i8)>,
}

/// Random base on the admissible levels, random input order and signs.
pub fn generate_trajectories(
    space: &InputSpace,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>, SensitivityError> {
    if count == 0 {
        return Err(SensitivityError::Infeasible("at least one trajectory is required".into()));
    }
    let k = space.k();
    let p = space.p;
    let jump = p / 2;
    let delta = space.delta();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(rng);
        let mut x = Vec::with_capacity(k);
        let mut signs = Vec::with_capacity(k);
        for _ in 0..k {
            let low = rng.gen_range(0..p - jump);
            let s: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
            x.push(space.level(if s > 0 { low } else { low + jump }));
            signs.push(s);
        }
        let mut points = vec![x.clone()];
        let mut steps = Vec::with_capacity(k);
        for &i in &order {
            let s = signs[i];
            let lvl = (x[i] * (p - 1) as f64).round() as isize + s as isize * jump as isize;
            x[i] = space.level(lvl as usize);
            points.push(x.clone());
            steps.push((i, s));
        }
        debug_assert!(steps.iter().all(|_| delta > 0.0));
        out.push(Trajectory { points, steps });
    }
    Ok(out)
}

/// Sum of Euclidean distances over all point pairs of two trajectories.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut d = 0.0;
    for x in &a.points {
        for y in &b.points {
            d += x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
        }
    }
    d
}

pub fn distance_matrix(t: &[Trajectory]) -> Vec<Vec<f64>> {
    (0..t.len())
        .into_par_iter()
        .map(|i| (0..t.len()).map(|j| if i == j { 0.0 } else { trajectory_distance(&t[i], &t[j]) }).collect())
        .collect()
}

/// Spread of a subset: square root of the summed squared pairwise distances.
pub fn spread(d: &[Vec<f64>], subset: &[usize]) -> f64 {
    let mut s = 0.0;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            s += d[i][j] * d[i][j];
        }
    }
    s.sqrt()
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub const EXHAUSTIVE_LIMIT: f64 = 1e5;

/// Indices of the `r` trajectories of maximal spread, sorted ascending.
pub fn select_spread(d: &[Vec<f64>], r: usize) -> Result<Vec<usize>, SensitivityError> {
    let n = d.len();
    if r == 0 || r > n {
        return Err(SensitivityError::Infeasible(format!("cannot select {r} of {n} trajectories")));
    }
    if r == n {
        return Ok((0..n).collect());
    }
    if binomial(n, r) <= EXHAUSTIVE_LIMIT {
        Ok(select_exhaustive(d, r))
    } else {
        Ok(select_greedy(d, r))
    }
}

/// Exact maximizer by enumeration; ties keep the lexicographically first subset.
pub fn select_exhaustive(d: &[Vec<f64>], r: usize) -> Vec<usize> {
    let n = d.len();
    let mut idx: Vec<usize> = (0..r).collect();
    let mut best = idx.clone();
    let mut best_val = f64::NEG_INFINITY;
    loop {
        let v = spread(d, &idx);
        if v > best_val {
            best_val = v;
            best.clone_from(&idx);
        }
        // next combination
        let mut i = r;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] != i + n - r {
                break;
            }
            if i == 0 {
                return best;
            }
        }
        idx[i] += 1;
        for j in i + 1..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Greedy augmentation from the farthest pair followed by single swaps
/// until no swap increases the spread.
pub fn select_greedy(d: &[Vec<f64>], r: usize) -> Vec<usize> {
    let n = d.len();
    if r == 1 {
        return vec![0];
    }
    let sq = |i: usize, j: usize| d[i][j] * d[i][j];
    let (mut bi, mut bj, mut bv) = (0, 1, f64::NEG_INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            if d[i][j] > bv {
                (bi, bj, bv) = (i, j, d[i][j]);
            }
        }
    }
    let mut chosen = vec![bi, bj];
    let mut in_set = vec![false; n];
    in_set[bi] = true;
    in_set[bj] = true;
    // contribution of every candidate to the current set
    let mut contrib: Vec<f64> = (0..n).map(|c| sq(c, bi) + sq(c, bj)).collect();
    while chosen.len() < r {
        let mut best = None;
        for c in 0..n {
            if !in_set[c] && best.map_or(true, |b: usize| contrib[c] > contrib[b]) {
                best = Some(c);
            }
        }
        let c = best.expect("enough candidates");
        in_set[c] = true;
        chosen.push(c);
        for (x, v) in contrib.iter_mut().enumerate() {
            *v += sq(x, c);
        }
    }
    loop {
        let mut improved = false;
        for pos in 0..r {
            let out = chosen[pos];
            let mut best_gain = 1e-12 * (1.0 + contrib[out]);
            let mut best_in = None;
            for c in 0..n {
                if in_set[c] {
                    continue;
                }
                let gain = (contrib[c] - sq(c, out)) - contrib[out];
                if gain > best_gain {
                    best_gain = gain;
                    best_in = Some(c);
                }
            }
            if let Some(c) = best_in {
                in_set[out] = false;
                in_set[c] = true;
                chosen[pos] = c;
                for (x, v) in contrib.iter_mut().enumerate() {
                    *v += sq(x, c) - sq(x, out);
                }
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Elementary effects of one trajectory. `outputs[j]` holds the model
/// outputs at point `j` or `None` if that run failed. The result is indexed
/// by input, then output component; `None` marks an absent effect.
pub fn elementary_effects(
    traj: &Trajectory,
    outputs: &[Option<Vec<f64>>],
    delta: f64,
) -> Vec<Option<Vec<f64>>> {
    let k = traj.steps.len();
    let mut effects = vec![None; k];
    for (j, &(i, s)) in traj.steps.iter().enumerate() {
        if let (Some(y0), Some(y1)) = (&outputs[j], &outputs[j + 1]) {
            effects[i] = Some(y0.iter().zip(y1).map(|(a, b)| s as f64 * (b - a) / delta).collect());
        }
    }
    effects
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub mu_star: f64,
    /// Sample standard deviation; absent with fewer than two effects.
    pub sigma: Option<f64>,
    pub count: usize,
    pub missing: usize,
}

/// Summary of the effects of one input. Absent and non-finite effects are
/// counted as missing.
pub fn summarize(effects: &[Option<f64>]) -> EffectSummary {
    let v: Vec<f64> = effects.iter().flatten().copied().filter(|d| d.is_finite()).collect();
    let n = v.len();
    let missing = effects.len() - n;
    if n == 0 {
        return EffectSummary {
            mu_star: f64::NAN,
            sigma: None,
            count: 0,
            missing,
        };
    }
    let mu_star = v.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    let sigma = (n >= 2).then(|| {
        let mean = v.iter().sum::<f64>() / n as f64;
        (v.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    EffectSummary { mu_star, sigma, count: n, missing }
}

/// Scales the measures so that the largest `μ*` and `ς` become one.
pub fn normalize(summaries: &[EffectSummary]) -> Vec<(f64, Option<f64>)> {
    let mu_max = summaries.iter().map(|s| s.mu_star).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let sig_max = summaries.iter().filter_map(|s| s.sigma).fold(0.0, f64::max);
    summaries
        .iter()
        .map(|s| {
            let m = if mu_max > 0.0 { s.mu_star / mu_max } else { 0.0 };
            let g = s.sigma.map(|g| if sig_max > 0.0 { g / sig_max } else { 0.0 });
            (m, g)
        })
        .collect()
}

/// Screening result for one output at one report time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputReport {
    pub output: String,
    pub time: f64,
    pub inputs: Vec<String>,
    pub summaries: Vec<EffectSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub trajectories: Vec<Trajectory>,
    pub selected: Vec<usize>,
    /// Model outputs per selected trajectory and point.
    pub outputs: Vec<Vec<Option<Vec<f64>>>>,
    pub reports: Vec<OutputReport>,
    pub failures: usize,
}

/// Output layout of a model: names of the quantities and report times.
/// Model vectors are ordered output-major, `outputs[o] × times[t]`.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub outputs: Vec<String>,
    pub times: Vec<f64>,
}

pub struct CampaignSettings {
    pub total: usize,
    pub selected: usize,
    pub seed: u64,
    /// Concurrent model evaluations, 0 for the rayon default.
    pub workers: usize,
}

/// Generates, selects and evaluates trajectories. Runs execute in parallel
/// and results are keyed by trajectory and point, so the report does not
/// depend on scheduling.
pub fn run_campaign<F>(
    space: &InputSpace,
    layout: &OutputLayout,
    settings: &CampaignSettings,
    model: F,
) -> Result<CampaignResult, SensitivityError>
where
    F: Fn(&[(String, f64)]) -> Result<Vec<f64>, String> + Sync,
{
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let trajectories = generate_trajectories(space, settings.total, &mut rng)?;
    let d = distance_matrix(&trajectories);
    let selected = select_spread(&d, settings.selected)?;
    let jobs: Vec<(usize, usize)> = selected
        .iter()
        .enumerate()
        .flat_map(|(t, &s)| (0..trajectories[s].points.len()).map(move |j| (t, j)))
        .collect();
    let width = layout.outputs.len() * layout.times.len();
    let eval = |&(t, j): &(usize, usize)| -> Option<Vec<f64>> {
        let values = space.map(&trajectories[selected[t]].points[j]);
        match model(&values) {
            Ok(y) if y.len() == width => Some(y),
            Ok(y) => {
                log::warn!("trajectory {t} point {j}: model returned {} values, expected {width}", y.len());
                None
            }
            Err(e) => {
                log::warn!("trajectory {t} point {j}: {e}");
                None
            }
        }
    };
    let results: Vec<Option<Vec<f64>>> = if settings.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers)
            .build()
            .map_err(|e| SensitivityError::Model(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(eval).collect())
    } else {
        jobs.par_iter().map(eval).collect()
    };
    let failures = results.iter().filter(|r| r.is_none()).count();
    let mut outputs: Vec<Vec<Option<Vec<f64>>>> = selected.iter().map(|_| Vec::new()).collect();
    for (&(t, _), r) in jobs.iter().zip(results) {
        outputs[t].push(r);
    }
    if failures == jobs.len() {
        return Err(SensitivityError::Model("every model evaluation failed".into()));
    }
    let reports = build_reports(space, layout, &selected, &trajectories, &outputs);
    Ok(CampaignResult {
        trajectories,
        selected,
        outputs,
        reports,
        failures,
    })
}

pub fn build_reports(
    space: &InputSpace,
    layout: &OutputLayout,
    selected: &[usize],
    trajectories: &[Trajectory],
    outputs: &[Vec<Option<Vec<f64>>>],
) -> Vec<OutputReport> {
    let delta = space.delta();
    // effects[input][trajectory] -> per component
    let mut per_input: Vec<Vec<Option<Vec<f64>>>> = vec![Vec::new(); space.k()];
    for (t, &s) in selected.iter().enumerate() {
        for (i, e) in elementary_effects(&trajectories[s], &outputs[t], delta).into_iter().enumerate() {
            per_input[i].push(e);
        }
    }
    let nt = layout.times.len();
    let mut reports = Vec::new();
    for (o, name) in layout.outputs.iter().enumerate() {
        for (ti, &time) in layout.times.iter().enumerate() {
            let c = o * nt + ti;
            let summaries = per_input
                .iter()
                .map(|effs| summarize(&effs.iter().map(|e| e.as_ref().map(|v| v[c])).collect::<Vec<_>>()))
                .collect();
            reports.push(OutputReport {
                output: name.clone(),
                time,
                inputs: space.inputs.iter().map(|i| i.name.clone()).collect(),
                summaries,
            });
        }
    }
    reports
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// One CSV per output: `input,time,mu_star,sigma,mu_star_norm,sigma_norm`,
/// normalized per output over all report times.
pub fn reports_csv(reports: &[OutputReport]) -> BTreeMap<String, String> {
    let mut by_output: BTreeMap<String, Vec<&OutputReport>> = BTreeMap::new();
    for r in reports {
        by_output.entry(r.output.clone()).or_default().push(r);
    }
    by_output
        .into_iter()
        .map(|(name, reps)| {
            let all: Vec<EffectSummary> = reps.iter().flat_map(|r| r.summaries.iter().cloned()).collect();
            let norm = normalize(&all);
            let mut s = String::from("input,time,mu_star,sigma,mu_star_norm,sigma_norm,effects,missing\n");
            let mut idx = 0;
            for r in &reps {
                for (inp, sm) in r.inputs.iter().zip(&r.summaries) {
                    let (mn, sn) = norm[idx];
                    idx += 1;
                    s.push_str(&format!(
                        "{inp},{},{},{},{mn},{},{},{}\n",
                        r.time,
                        sm.mu_star,
                        fmt_opt(sm.sigma),
                        fmt_opt(sn),
                        sm.count,
                        sm.missing
                    ));
                }
            }
            (name, s)
        })
        .collect()
}

/// Writes `morris_<output>.csv` and `morris_<output>.svg` for every output.
pub fn write_reports(reports: &[OutputReport], dir: &Path) -> Result<Vec<std::path::PathBuf>, SensitivityError> {
    let io = |path: &Path, source| SensitivityError::Io { path: path.to_path_buf(), source };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    for (name, csv) in reports_csv(reports) {
        let path = dir.join(format!("morris_{name}.csv"));
        std::fs::write(&path, csv).map_err(|e| io(&path, e))?;
        written.push(path);
        let group: Vec<OutputReport> = reports.iter().filter(|r| r.output == name).cloned().collect();
        let svg = crate::plot::morris_scatter(&group).map_err(|e| SensitivityError::Model(e.to_string()))?;
        let path = dir.join(format!("morris_{name}.svg"));
        std::fs::write(&path, svg).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Selected trajectories as CSV: `trajectory,point,<inputs...>`.
pub fn trajectories_csv(space: &InputSpace, result: &CampaignResult) -> String {
    let mut s = String::from("trajectory,point");
    for i in &space.inputs {
        s.push(',');
        s.push_str(&i.name);
    }
    s.push('\n');
    for &t in &result.selected {
        for (j, x) in result.trajectories[t].points.iter().enumerate() {
            s.push_str(&format!("{t},{j}"));
            for v in x {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn unit_space(k: usize, p: usize) -> InputSpace {
        let inputs = (0..k)
            .map(|i| Input {
                name: format!("x{i}"),
                dist: Distribution::Uniform { a: 0.0, b: 1.0 },
            })
            .collect();
        InputSpace::new(inputs, p).unwrap()
    }

    #[test]
    fn delta_for_four_levels() {
        assert_eq!(unit_space(2, 4).delta(), 2.0 / 3.0);
    }

    #[test]
    fn mapping_endpoints_and_midpoints() {
        let u = Distribution::Uniform { a: 8.5, b: 10.5 };
        let l = Distribution::LogUniform { a: 1.0, b: 100.0 };
        assert_eq!(u.map(0.0), 8.5);
        assert_eq!(u.map(1.0), 10.5);
        assert_eq!(u.map(0.5), 9.5);
        assert_eq!(l.map(0.0), 1.0);
        assert_eq!(l.map(1.0), 100.0);
        assert!((l.map(0.5) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn bad_spaces_are_rejected() {
        let one = |d| vec![Input { name: "a".into(), dist: d }];
        assert!(InputSpace::new(one(Distribution::Uniform { a: 0.0, b: 1.0 }), 3).is_err());
        assert!(InputSpace::new(one(Distribution::Uniform { a: 1.0, b: 1.0 }), 4).is_err());
        assert!(InputSpace::new(one(Distribution::LogUniform { a: 0.0, b: 1.0 }), 4).is_err());
    }

    #[test]
    fn steps_between_four_levels() {
        let s = unit_space(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in generate_trajectories(&s, 20, &mut rng).unwrap() {
            for w in t.points.windows(2) {
                let diff: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).abs()).collect();
                assert_eq!(diff.iter().filter(|&&d| d > 0.0).count(), 1);
                assert!(diff.iter().any(|&d| (d - 2.0 / 3.0).abs() < 1e-15));
            }
        }
    }

    proptest! {
        #[test]
        fn trajectories_stay_on_the_grid(seed in 0u64..1000, k in 1usize..7, half in 1usize..4) {
            let p = 2 * half;
            let s = unit_space(k, p);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ts = generate_trajectories(&s, 5, &mut rng).unwrap();
            for t in ts {
                prop_assert_eq!(t.points.len(), k + 1);
                let mut varied: Vec<usize> = t.steps.iter().map(|s| s.0).collect();
                varied.sort_unstable();
                prop_assert_eq!(varied, (0..k).collect::<Vec<_>>());
                for x in &t.points {
                    for &u in x {
                        prop_assert!((0.0..=1.0).contains(&u));
                        let l = u * (p - 1) as f64;
                        prop_assert!((l - l.round()).abs() < 1e-12);
                    }
                }
                for (j, &(i, sg)) in t.steps.iter().enumerate() {
                    let d = t.points[j + 1][i] - t.points[j][i];
                    prop_assert!((d - sg as f64 * s.delta()).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn linear_model_recovers_coefficients(seed in 0u64..500, k in 1usize..6) {
            let s = unit_space(k, 4);
            let a: Vec<f64> = (0..k).map(|i| (i as f64 - 1.7) * 0.9).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ts = generate_trajectories(&s, 6, &mut rng).unwrap();
            let mut effs = vec![Vec::new(); k];
            for t in &ts {
                let y: Vec<Option<Vec<f64>>> = t.points.iter()
                    .map(|x| Some(vec![x.iter().zip(&a).map(|(u, c)| u * c).sum()]))
                    .collect();
                for (i, e) in elementary_effects(t, &y, s.delta()).into_iter().enumerate() {
                    effs[i].push(e.map(|v| v[0]));
                }
            }
            for i in 0..k {
                let sm = summarize(&effs[i]);
                prop_assert!((sm.mu_star - a[i].abs()).abs() < 1e-12);
                prop_assert!(sm.sigma.unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_model_has_zero_effects() {
        let s = unit_space(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = &generate_trajectories(&s, 1, &mut rng).unwrap()[0];
        let y = vec![Some(vec![4.0]); 4];
        assert!(elementary_effects(t, &y, s.delta()).iter().all(|e| e.as_ref().unwrap()[0] == 0.0));
    }

    #[test]
    fn bilinear_model_shows_interaction() {
        let s = unit_space(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ts = generate_trajectories(&s, 50, &mut rng).unwrap();
        let sel = select_spread(&distance_matrix(&ts), 10).unwrap();
        let mut e1 = Vec::new();
        for &i in &sel {
            let y: Vec<_> = ts[i].points.iter().map(|x| Some(vec![x[0] * x[1]])).collect();
            e1.push(elementary_effects(&ts[i], &y, s.delta())[0].as_ref().map(|v| v[0]));
        }
        assert!(summarize(&e1).sigma.unwrap() > 0.0);
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[Some(1.0), Some(-1.0)]);
        assert_eq!(s.mu_star, 1.0);
        assert!((s.sigma.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[Some(3.0), Some(3.0), None]).sigma, Some(0.0));
        assert_eq!(summarize(&[Some(3.0), None]).sigma, None);
        assert_eq!(summarize(&[Some(3.0), None]).missing, 1);
        let n = normalize(&[summarize(&[Some(1.0), Some(2.0)]), summarize(&[Some(4.0), Some(-4.0)])]);
        assert_eq!(n[1].0, 1.0);
        assert_eq!(n[1].1, Some(1.0));
    }

    fn brute_force_best(d: &[Vec<f64>], r: usize) -> f64 {
        let n = d.len();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == r {
                let sub: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
                best = best.max(spread(d, &sub));
            }
        }
        best
    }

    #[test]
    fn selection_matches_exhaustive_search() {
        let s = unit_space(3, 4);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ts = generate_trajectories(&s, 4, &mut rng).unwrap();
            let d = distance_matrix(&ts);
            let sel = select_spread(&d, 2).unwrap();
            assert!((spread(&d, &sel) - brute_force_best(&d, 2)).abs() < 1e-12);
            let g = select_greedy(&d, 2);
            assert!((spread(&d, &g) - brute_force_best(&d, 2)).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ts = generate_trajectories(&s, 5, &mut rng).unwrap();
        assert_eq!(select_spread(&distance_matrix(&ts), 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(select_spread(&distance_matrix(&ts), 0).is_err());
    }

    #[test]
    fn greedy_beats_random_subsets() {
        let s = unit_space(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ts = generate_trajectories(&s, 60, &mut rng).unwrap();
        let d = distance_matrix(&ts);
        let sel = select_spread(&d, 6).unwrap();
        let v = spread(&d, &sel);
        let mut idx: Vec<usize> = (0..60).collect();
        for _ in 0..100 {
            idx.shuffle(&mut rng);
            assert!(v >= spread(&d, &idx[..6]));
        }
    }

    #[test]
    fn campaign_is_reproducible_and_order_independent() {
        let s = unit_space(3, 4);
        let layout = OutputLayout { outputs: vec!["y".into()], times: vec![1.0, 2.0] };
        let settings = |workers| CampaignSettings { total: 30, selected: 5, seed: 11, workers };
        let model = |v: &[(String, f64)]| Ok(vec![v[0].1 + 2.0 * v[1].1, v[2].1 * v[0].1]);
        let a = run_campaign(&s, &layout, &settings(1), model).unwrap();
        let b = run_campaign(&s, &layout, &settings(3), model).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reports.len(), 2);
        assert!((a.reports[0].summaries[1].mu_star - 2.0).abs() < 1e-12);
        let csv = reports_csv(&a.reports);
        assert_eq!(csv["y"].lines().count(), 1 + 2 * 3);
    }

    #[test]
    fn failed_runs_are_reported_missing() {
        let s = unit_space(2, 4);
        let layout = OutputLayout { outputs: vec!["y".into()], times: vec![1.0] };
        let settings = CampaignSettings { total: 10, selected: 4, seed: 2, workers: 1 };
        let model = |v: &[(String, f64)]| if v[0].1 > 0.9 { Err("boom".to_string()) } else { Ok(vec![v[1].1]) };
        let r = run_campaign(&s, &layout, &settings, model).unwrap();
        assert!(r.failures > 0);
        let missing: usize = r.reports[0].summaries.iter().map(|s| s.missing).sum();
        assert!(missing > 0);
    }

    #[test]
    fn space_file_parsing() {
        let s = InputSpace::parse(
            "levels = 4\nreport_times = [\"7 d\", 336]\n[[input]]\nname = \"kappa\"\n\
             [[input]]\nname = \"c_ref\"\nbounds = [8.5, 10.5]\ndistribution = \"uniform\"\n",
        )
        .unwrap();
        assert_eq!(s.report_times, vec![168.0, 336.0]);
        assert_eq!(s.inputs[0].dist, Distribution::LogUniform { a: 1e-12, b: 1e-7 });
        assert!(InputSpace::parse("[[input]]\nname = \"q\"\n").is_err());
        assert!(InputSpace::parse("levels = 3\n[[input]]\nname = \"tau\"\n").is_err());
        let d = InputSpace::default_space();
        assert_eq!(d.k(), 9);
        d.check_parameters().unwrap();
    }
}
