//! Effort/effect paths through the field of relevance, their classification,
//! and parameter sweeps that populate the field.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, AgentError, SessionOptions, SessionStatus, SessionTrace};
use crate::belief::{derive_seed, Nats};
use crate::config::RunConfig;
use crate::world::{self, WorldError};

/// Grid axes larger than this are almost certainly a typo.
const MAX_AXIS_POINTS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("boundary.{field}: {reason}")]
    InvalidBoundary { field: &'static str, reason: String },
    #[error("invalid grid `{spec}`: {reason}")]
    InvalidGrid { spec: String, reason: String },
    #[error("replicas must be >= 1")]
    NoReplicas,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub effort: Nats,
    pub effect: f64,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevancePath {
    pub points: Vec<PathPoint>,
    pub terminal_status: SessionStatus,
}

impl RelevancePath {
    pub fn terminal(&self) -> PathPoint {
        *self.points.last().expect("a path always holds its origin")
    }
}

/// Cumulative effort, effect and time after each TU, starting at the origin.
pub fn trace_path(trace: &SessionTrace) -> RelevancePath {
    let mut at = PathPoint {
        effort: Nats::ZERO,
        effect: 0.0,
        tick: 0,
    };
    let mut points = vec![at];
    for r in &trace.records {
        at.effort += r.effort();
        at.effect += r.effect;
        at.tick += r.fast_ticks;
        points.push(at);
    }
    RelevancePath {
        points,
        terminal_status: trace.status,
    }
}

/// Where worthwhile-but-cheap ends and too-costly begins.
///
/// `curve` gives the effect required at each effort level and is only used
/// for rendering; classification uses the `e_max`/`f_min` rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelevanceBoundary {
    pub e_max: f64,
    pub f_min: f64,
    pub curve: Vec<(f64, f64)>,
}

impl Default for RelevanceBoundary {
    fn default() -> Self {
        Self {
            e_max: 10.0,
            f_min: 2.0,
            curve: vec![(0.0, 0.0), (10.0, 2.0), (30.0, 12.0)],
        }
    }
}

impl RelevanceBoundary {
    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |field, reason: &str| {
            Err(FieldError::InvalidBoundary {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.e_max.is_finite() && self.e_max >= 0.0) {
            return bad("e_max", "must be finite and >= 0");
        }
        if !self.f_min.is_finite() {
            return bad("f_min", "must be finite");
        }
        if self.curve.is_empty() {
            return bad("curve", "needs at least one point");
        }
        if self.curve.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return bad("curve", "points must be finite");
        }
        for w in self.curve.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad("curve", "effort coordinates must increase");
            }
            if w[1].1 < w[0].1 {
                return bad("curve", "required effect must not decrease");
            }
        }
        if (self.required_effect(self.e_max) - self.f_min).abs() > 1e-9 {
            return bad("curve", "must pass through (e_max, f_min)");
        }
        Ok(())
    }

    /// Piecewise-linear interpolation, flat beyond the end points.
    pub fn required_effect(&self, effort: f64) -> f64 {
        let c = &self.curve;
        if effort <= c[0].0 {
            return c[0].1;
        }
        for w in c.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if effort <= x1 {
                return y0 + (y1 - y0) * (effort - x0) / (x1 - x0);
            }
        }
        c[c.len() - 1].1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathClass {
    HighRelevance,
    EffortfulSuccess,
    Abandoned,
    Irrelevant,
}

impl PathClass {
    pub const ALL: [PathClass; 4] = [
        PathClass::HighRelevance,
        PathClass::EffortfulSuccess,
        PathClass::Abandoned,
        PathClass::Irrelevant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PathClass::HighRelevance => "high_relevance",
            PathClass::EffortfulSuccess => "effortful_success",
            PathClass::Abandoned => "abandoned",
            PathClass::Irrelevant => "irrelevant",
        }
    }
}

impl fmt::Display for PathClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PathClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown path class `{s}`"))
    }
}

pub fn classify_path(path: &RelevancePath, boundary: &RelevanceBoundary) -> PathClass {
    if path.terminal_status == SessionStatus::Abandoned {
        return PathClass::Abandoned;
    }
    let end = path.terminal();
    if end.effect >= boundary.f_min {
        if end.effort.0 <= boundary.e_max {
            PathClass::HighRelevance
        } else {
            PathClass::EffortfulSuccess
        }
    } else {
        PathClass::Irrelevant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Rho,
    Kappa,
    Theta,
    Gamma,
    Budget,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] = [
        SweepParam::Rho,
        SweepParam::Kappa,
        SweepParam::Theta,
        SweepParam::Gamma,
        SweepParam::Budget,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Rho => "rho",
            SweepParam::Kappa => "kappa",
            SweepParam::Theta => "theta",
            SweepParam::Gamma => "gamma",
            SweepParam::Budget => "budget",
        }
    }

    pub fn get(self, config: &RunConfig) -> f64 {
        match self {
            SweepParam::Rho => config.task.context_overlap,
            SweepParam::Kappa => config.monitor.habit_strength,
            SweepParam::Theta => config.monitor.theta,
            SweepParam::Gamma => config.monitor.precision,
            SweepParam::Budget => config.monitor.effort_budget,
        }
    }

    pub fn set(self, config: &mut RunConfig, value: f64) {
        match self {
            SweepParam::Rho => config.task.context_overlap = value,
            SweepParam::Kappa => config.monitor.habit_strength = value,
            SweepParam::Theta => config.monitor.theta = value,
            SweepParam::Gamma => config.monitor.precision = value,
            SweepParam::Budget => config.monitor.effort_budget = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown parameter `{s}` (expected rho, kappa, theta, gamma or budget)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl GridAxis {
    pub fn new(param: SweepParam, values: Vec<f64>) -> Self {
        Self { param, values }
    }
}

impl FromStr for GridAxis {
    type Err = FieldError;

    /// `param=lo:hi:step`, inclusive of `hi` up to rounding.
    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let fail = |reason: String| FieldError::InvalidGrid {
            spec: spec.to_string(),
            reason,
        };
        let (name, range) = spec
            .split_once('=')
            .ok_or_else(|| fail("expected param=lo:hi:step".into()))?;
        let param: SweepParam = name.trim().parse().map_err(fail)?;
        let parts: Vec<&str> = range.split(':').collect();
        let [lo, hi, step] = parts.as_slice() else {
            return Err(fail("expected param=lo:hi:step".into()));
        };
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(format!("`{s}` is not a finite number")))
        };
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if hi < lo {
            return Err(fail("hi is below lo".into()));
        }
        if step <= 0.0 {
            return Err(fail("step must be > 0".into()));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        if n > MAX_AXIS_POINTS {
            return Err(fail(format!("more than {MAX_AXIS_POINTS} points")));
        }
        let values = (0..n)
            .map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12)
            .collect();
        Ok(GridAxis { param, values })
    }
}

/// Cartesian product of axes; the first axis varies slowest.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepGrid {
    pub axes: Vec<GridAxis>,
}

impl SweepGrid {
    pub fn new(axes: Vec<GridAxis>) -> Self {
        Self { axes }
    }

    pub fn parse(specs: &[String]) -> Result<Self, FieldError> {
        let axes = specs
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<GridAxis>, _>>()?;
        Ok(Self { axes })
    }

    /// ρ over {0.1, 0.3, 0.5, 0.7, 0.9}.
    pub fn default_rho() -> Self {
        Self::new(vec![GridAxis::new(
            SweepParam::Rho,
            vec![0.1, 0.3, 0.5, 0.7, 0.9],
        )])
    }

    pub fn points(&self) -> Vec<Vec<(SweepParam, f64)>> {
        let mut points = vec![Vec::new()];
        for axis in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push((axis.param, v));
                        q
                    })
                })
                .collect();
        }
        points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub replica: usize,
    pub seed: u64,
    pub rho: f64,
    pub kappa: f64,
    pub theta: f64,
    pub gamma: f64,
    pub budget: f64,
    pub status: SessionStatus,
    pub effort: Nats,
    pub effect: f64,
    pub relevance: f64,
    pub imode_count: usize,
    pub interruptions: usize,
    pub class: PathClass,
}

pub const SWEEP_HEADER: [&str; 15] = [
    "point",
    "replica",
    "seed",
    "rho",
    "kappa",
    "theta",
    "gamma",
    "budget",
    "status",
    "effort_nats",
    "effect",
    "relevance",
    "imode_count",
    "interruptions",
    "class",
];

impl SweepRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.point.to_string(),
            self.replica.to_string(),
            self.seed.to_string(),
            self.rho.to_string(),
            self.kappa.to_string(),
            self.theta.to_string(),
            self.gamma.to_string(),
            self.budget.to_string(),
            match self.status {
                SessionStatus::Completed => "completed".into(),
                SessionStatus::Abandoned => "abandoned".into(),
            },
            self.effort.0.to_string(),
            self.effect.to_string(),
            self.relevance.to_string(),
            self.imode_count.to_string(),
            self.interruptions.to_string(),
            self.class.to_string(),
        ]
    }
}

/// Seeds for replica `r`: one for building the task, one for the session.
/// They depend on the replica only, so every grid point sees the same texts
/// and the same random draws.
pub fn replica_seeds(master_seed: u64, replica: usize) -> (u64, u64) {
    let r = derive_seed(master_seed, replica as u64);
    (derive_seed(r, 0), derive_seed(r, 1))
}

/// Runs one session with task and session seeds given explicitly.
pub fn run_seeded(
    config: &RunConfig,
    task_seed: u64,
    session_seed: u64,
    options: &SessionOptions,
) -> Result<SessionTrace, FieldError> {
    let mut task_config = config.task.clone();
    task_config.seed = task_seed;
    let task = world::build_task(&task_config, config.monitor.habit_strength)?;
    Ok(agent::run_session(
        &task,
        &config.monitor,
        session_seed,
        options,
    )?)
}

pub fn field_sweep(
    base: &RunConfig,
    grid: &SweepGrid,
    replicas: usize,
    master_seed: u64,
    options: &SessionOptions,
) -> Result<Vec<SweepRow>, FieldError> {
    if replicas == 0 {
        return Err(FieldError::NoReplicas);
    }
    if grid.axes.is_empty() || grid.axes.iter().any(|a| a.values.is_empty()) {
        return Err(FieldError::InvalidGrid {
            spec: String::new(),
            reason: "grid is empty".into(),
        });
    }
    base.boundary.validate()?;
    let configs: Vec<RunConfig> = grid
        .points()
        .into_iter()
        .map(|point| {
            let mut c = base.clone();
            for (param, v) in point {
                param.set(&mut c, v);
            }
            c
        })
        .collect();
    for c in &configs {
        c.task.validate()?;
        c.monitor.validate()?;
    }

    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|p| (0..replicas).map(move |r| (p, r)))
        .collect();
    jobs.par_iter()
        .map(|&(point, replica)| {
            let config = &configs[point];
            let (task_seed, session_seed) = replica_seeds(master_seed, replica);
            let trace = run_seeded(config, task_seed, session_seed, options)?;
            let path = trace_path(&trace);
            Ok(SweepRow {
                point,
                replica,
                seed: session_seed,
                rho: SweepParam::Rho.get(config),
                kappa: SweepParam::Kappa.get(config),
                theta: SweepParam::Theta.get(config),
                gamma: SweepParam::Gamma.get(config),
                budget: SweepParam::Budget.get(config),
                status: trace.status,
                effort: trace.totals.effort,
                effect: trace.totals.effect,
                relevance: trace.totals.relevance(),
                imode_count: trace.totals.imode_count,
                interruptions: trace.totals.interruptions,
                class: classify_path(&path, &config.boundary),
            })
        })
        .collect()
}

/// Mean effect per nat of effort within the lower, middle and upper effort
/// terciles of effortful-success rows. `None` with fewer than three rows.
pub fn tercile_returns(rows: &[SweepRow]) -> Option<[f64; 3]> {
    let mut paths: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.class == PathClass::EffortfulSuccess && r.effort.0 > 0.0)
        .collect();
    if paths.len() < 3 {
        return None;
    }
    paths.sort_by(|a, b| {
        a.effort
            .0
            .total_cmp(&b.effort.0)
            .then(a.point.cmp(&b.point))
            .then(a.replica.cmp(&b.replica))
    });
    let n = paths.len();
    let mut out = [0.0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let group = &paths[k * n / 3..(k + 1) * n / 3];
        *slot = group.iter().map(|r| r.effect / r.effort.0).sum::<f64>() / group.len() as f64;
    }
    Some(out)
}

/// Mean number of interrupted s-mode drafts per session at each grid point.
pub fn trigger_rate_by_point(rows: &[SweepRow]) -> Vec<f64> {
    let points = rows.iter().map(|r| r.point + 1).max().unwrap_or(0);
    let mut sums = vec![(0.0, 0usize); points];
    for r in rows {
        sums[r.point].0 += r.interruptions as f64;
        sums[r.point].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

/// Renders paths over the boundary as a standalone SVG document.
pub fn render_svg(paths: &[(PathClass, RelevancePath)], boundary: &RelevanceBoundary) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 48.0;
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let max_effort = paths
        .iter()
        .flat_map(|(_, p)| p.points.iter().map(|q| finite(q.effort.0)))
        .fold(boundary.e_max * 1.5, f64::max)
        .max(1.0);
    let max_effect = paths
        .iter()
        .flat_map(|(_, p)| p.points.iter().map(|q| q.effect))
        .fold(boundary.f_min * 1.5, f64::max)
        .max(1.0);
    let sx = |e: f64| PAD + (W - 2.0 * PAD) * finite(e).min(max_effort) / max_effort;
    let sy = |f: f64| H - PAD - (H - 2.0 * PAD) * f.min(max_effect) / max_effect;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{y0}\" x2=\"{PAD}\" y2=\"{PAD}\" stroke=\"black\"/>\n\
         <text x=\"{xl}\" y=\"{yl}\" font-size=\"12\">effort (nats)</text>\n\
         <text x=\"8\" y=\"{PAD}\" font-size=\"12\">effect</text>\n",
        y0 = H - PAD,
        x1 = W - PAD,
        xl = W / 2.0,
        yl = H - 12.0,
    );
    svg += &format!(
        "<rect x=\"{PAD}\" y=\"{top:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"#dfe\" stroke=\"none\"/>\n",
        top = sy(max_effect),
        w = sx(boundary.e_max) - PAD,
        h = sy(boundary.f_min) - sy(max_effect),
    );
    let mut curve: Vec<(f64, f64)> = boundary.curve.clone();
    curve.push((max_effort, boundary.required_effect(max_effort)));
    let pts: Vec<String> = curve
        .iter()
        .map(|&(e, f)| format!("{:.2},{:.2}", sx(e), sy(f)))
        .collect();
    svg += &format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"red\" stroke-width=\"2\"/>\n",
        pts.join(" ")
    );
    for (class, path) in paths {
        let (colour, dash) = match class {
            PathClass::HighRelevance => ("green", ""),
            PathClass::EffortfulSuccess => ("seagreen", ""),
            PathClass::Abandoned => ("grey", " stroke-dasharray=\"4 3\""),
            PathClass::Irrelevant => ("orange", " stroke-dasharray=\"2 2\""),
        };
        let pts: Vec<String> = path
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.effort.0), sy(p.effect)))
            .collect();
        svg += &format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-opacity=\"0.6\"{dash}/>\n",
            pts.join(" ")
        );
    }
    svg += "</svg>\n";
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(effort: f64, effect: f64, status: SessionStatus) -> RelevancePath {
        RelevancePath {
            points: vec![
                PathPoint {
                    effort: Nats::ZERO,
                    effect: 0.0,
                    tick: 0,
                },
                PathPoint {
                    effort: Nats(effort),
                    effect,
                    tick: 3,
                },
            ],
            terminal_status: status,
        }
    }

    #[test]
    fn classification_regions() {
        let b = RelevanceBoundary {
            f_min: 1.0,
            curve: vec![(0.0, 0.0), (10.0, 1.0)],
            ..RelevanceBoundary::default()
        };
        b.validate().unwrap();
        let done = SessionStatus::Completed;
        assert_eq!(classify_path(&path(0.5, 5.0, done), &b), PathClass::HighRelevance);
        assert_eq!(classify_path(&path(15.0, 5.0, done), &b), PathClass::EffortfulSuccess);
        assert_eq!(classify_path(&path(15.0, 0.5, done), &b), PathClass::Irrelevant);
        assert_eq!(
            classify_path(&path(0.5, 5.0, SessionStatus::Abandoned), &b),
            PathClass::Abandoned
        );
    }

    #[test]
    fn empty_trace_is_origin() {
        let trace = SessionTrace {
            seed: 0,
            records: vec![],
            status: SessionStatus::Completed,
            totals: agent::SessionTotals::from_records(&[]),
        };
        let p = trace_path(&trace);
        assert_eq!(p.points.len(), 1);
        assert_eq!(p.terminal().effort, Nats::ZERO);
    }

    #[test]
    fn boundary_rules() {
        RelevanceBoundary::default().validate().unwrap();
        let b = RelevanceBoundary::default();
        assert_eq!(b.required_effect(-1.0), 0.0);
        assert!((b.required_effect(20.0) - 7.0).abs() < 1e-12);
        assert_eq!(b.required_effect(99.0), 12.0);
        let off = RelevanceBoundary {
            f_min: 3.0,
            ..RelevanceBoundary::default()
        };
        assert!(off.validate().is_err());
        let falling = RelevanceBoundary {
            curve: vec![(0.0, 5.0), (10.0, 2.0)],
            ..RelevanceBoundary::default()
        };
        assert!(falling.validate().is_err());
    }

    #[test]
    fn grid_parsing() {
        let a: GridAxis = "rho=0.1:0.5:0.2".parse().unwrap();
        assert_eq!(a.param, SweepParam::Rho);
        assert_eq!(a.values, vec![0.1, 0.3, 0.5]);
        let b: GridAxis = "budget=5:5:1".parse().unwrap();
        assert_eq!(b.values, vec![5.0]);
        for bad in ["rho", "rho=1:0:0.1", "rho=0:1:0", "nu=0:1:0.5", "rho=a:1:0.5", "rho=0:1"] {
            assert!(bad.parse::<GridAxis>().is_err(), "{bad}");
        }
    }

    #[test]
    fn grid_points_are_a_product() {
        let g = SweepGrid::parse(&["rho=0.1:0.3:0.1".into(), "theta=1:2:1".into()]).unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![(SweepParam::Rho, 0.1), (SweepParam::Theta, 1.0)]);
        assert_eq!(pts[1], vec![(SweepParam::Rho, 0.1), (SweepParam::Theta, 2.0)]);
    }

    #[test]
    fn sweep_cardinality_and_order() {
        let g = SweepGrid::parse(&["rho=0.1:0.5:0.2".into()]).unwrap();
        let rows = field_sweep(&RunConfig::default(), &g, 10, 42, &SessionOptions::default())
            .unwrap();
        assert_eq!(rows.len(), 30);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!((r.point, r.replica), (i / 10, i % 10));
        }
        assert!(field_sweep(&RunConfig::default(), &g, 0, 42, &SessionOptions::default()).is_err());
        assert!(field_sweep(
            &RunConfig::default(),
            &SweepGrid::default(),
            1,
            42,
            &SessionOptions::default()
        )
        .is_err());
    }

    #[test]
    fn terciles_need_rows() {
        assert_eq!(tercile_returns(&[]), None);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = render_svg(
            &[(PathClass::HighRelevance, path(1.0, 3.0, SessionStatus::Completed))],
            &RelevanceBoundary::default(),
        );
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
