//! Run orchestration: configuration, construction driving, verification
//! reports, and file exports. The CLI is a thin wrapper over this module so
//! that integration tests can drive everything in-process.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    self, BallAnalyzer, BallQuery, CaseTag, EnergyReport, ProjectionSeries, RecursionReport,
    SplitMix64,
};
use crate::construction::{
    assign_mass, build_stage, certify_injectivity, total_mass, verify_interval_ordering,
    BuildLimits, ConstructionLedger, Stage,
};
use crate::direction::Direction;
use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::planes::{self, DualFamily, PlaneFamily};
use crate::rational::Rational;
use crate::schedule::{
    build_schedule, plan_parameters, validate_plan_row, LineSchedule, OptionKind, PlanState,
    PlannerConfig,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthPolicy {
    Cycles(u32),
    Stages(u32),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub d: usize,
    pub t: Rational,
    pub option: OptionKind,
    pub lines: Vec<Vec<i64>>,
    pub depth: DepthPolicy,
    pub growth: Rational,
    pub max_pieces: Option<u64>,
    pub ball_samples: u32,
    pub seed: u64,
    pub k_ramp: Option<u32>,
    pub case_split: bool,
    pub shape_to_target: bool,
    pub family_size: usize,
    pub plan_override: Option<Vec<(u64, u64)>>,
    pub verticals: Vec<Vec<Rational>>,
    pub plane_d: Option<usize>,
    pub plane_k: Option<usize>,
    pub plane_s: Option<Rational>,
    /// raw config text, echoed into the manifest and hashed
    pub raw: String,
}

impl RunConfig {
    pub fn new(d: usize, t: Rational, option: OptionKind, lines: Vec<Vec<i64>>) -> Self {
        RunConfig {
            d,
            t,
            option,
            lines,
            depth: DepthPolicy::Cycles(2),
            growth: Rational::from_int(2),
            max_pieces: Some(200_000),
            ball_samples: 1000,
            seed: 42,
            k_ramp: None,
            case_split: false,
            shape_to_target: true,
            family_size: 256,
            plan_override: None,
            verticals: Vec::new(),
            plane_d: None,
            plane_k: None,
            plane_s: None,
            raw: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config("d must be ≥ 2".into()));
        }
        if self.t.is_negative() || self.t > Rational::one() {
            return Err(Error::Config(format!("t = {} outside [0,1]", self.t)));
        }
        match self.option {
            OptionKind::Capacity if self.t >= Rational::one() => {
                return Err(Error::Config("option capacity requires t < 1".into()));
            }
            OptionKind::MeasureZero if self.t.is_zero() => {
                return Err(Error::Config("option measure_zero requires t > 0".into()));
            }
            _ => {}
        }
        if self.lines.is_empty() {
            return Err(Error::Config("need at least one user line".into()));
        }
        for l in &self.lines {
            if l.len() != self.d {
                return Err(Error::Config(format!(
                    "line {:?} has dimension {} ≠ d = {}",
                    l,
                    l.len(),
                    self.d
                )));
            }
        }
        Ok(())
    }

    pub fn cycle_len(&self) -> u32 {
        (2 * self.d * self.lines.len()) as u32
    }

    pub fn stages(&self) -> u32 {
        match self.depth {
            DepthPolicy::Cycles(c) => c * self.cycle_len(),
            DepthPolicy::Stages(s) => s,
        }
    }

    /// Parse the flat key = value config format.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            kv.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |k: &str| kv.get(k).cloned();
        let req = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("missing key {k}")))
        };

        let d: usize = req("d")?
            .parse()
            .map_err(|e| Error::Config(format!("bad d: {e}")))?;
        let t: Rational = req("t")?.parse()?;
        let option = match req("option")?.as_str() {
            "capacity" => OptionKind::Capacity,
            "measure_zero" => OptionKind::MeasureZero,
            "unconstrained" => OptionKind::Unconstrained,
            other => return Err(Error::Config(format!("unknown option {other:?}"))),
        };
        let lines: Vec<Vec<i64>> = req("lines")?
            .split(';')
            .map(|part| {
                part.trim()
                    .trim_start_matches('(')
                    .trim_end_matches(')')
                    .split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<i64>()
                            .map_err(|e| Error::Config(format!("bad line component: {e}")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let depth = match (get("cycles"), get("stages")) {
            (Some(c), None) => DepthPolicy::Cycles(
                c.parse().map_err(|e| Error::Config(format!("bad cycles: {e}")))?,
            ),
            (None, Some(s)) => DepthPolicy::Stages(
                s.parse().map_err(|e| Error::Config(format!("bad stages: {e}")))?,
            ),
            (None, None) => DepthPolicy::Cycles(2),
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either cycles or stages, not both".into()))
            }
        };

        let mut cfg = RunConfig::new(d, t, option, lines);
        cfg.depth = depth;
        if let Some(g) = get("growth") {
            cfg.growth = g.parse()?;
        }
        if let Some(m) = get("max_pieces") {
            cfg.max_pieces = if m == "none" {
                None
            } else {
                Some(m.parse().map_err(|e| Error::Config(format!("bad max_pieces: {e}")))?)
            };
        }
        if let Some(b) = get("ball_samples") {
            cfg.ball_samples =
                b.parse().map_err(|e| Error::Config(format!("bad ball_samples: {e}")))?;
        }
        if let Some(s) = get("seed") {
            cfg.seed = s.parse().map_err(|e| Error::Config(format!("bad seed: {e}")))?;
        }
        if let Some(k) = get("k_ramp") {
            cfg.k_ramp =
                Some(k.parse().map_err(|e| Error::Config(format!("bad k_ramp: {e}")))?);
        }
        if let Some(c) = get("case_split") {
            cfg.case_split = c == "true";
        }
        if let Some(c) = get("shape") {
            cfg.shape_to_target = c == "true";
        }
        if let Some(f) = get("family_size") {
            cfg.family_size =
                f.parse().map_err(|e| Error::Config(format!("bad family_size: {e}")))?;
        }
        if let Some(p) = get("plan") {
            let rows: Vec<(u64, u64)> = p
                .split(';')
                .map(|pair| {
                    let (n, a) = pair
                        .trim()
                        .split_once(':')
                        .ok_or_else(|| Error::Config("plan rows are n:a".into()))?;
                    Ok((
                        n.trim().parse().map_err(|e| Error::Config(format!("bad plan n: {e}")))?,
                        a.trim().parse().map_err(|e| Error::Config(format!("bad plan a: {e}")))?,
                    ))
                })
                .collect::<Result<_>>()?;
            cfg.plan_override = Some(rows);
        }
        if let Some(v) = get("verticals") {
            cfg.verticals = v
                .split(';')
                .map(|part| {
                    part.trim()
                        .split(',')
                        .map(|c| c.trim().parse::<Rational>())
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("plane_d") {
            cfg.plane_d =
                Some(v.parse().map_err(|e| Error::Config(format!("bad plane_d: {e}")))?);
        }
        if let Some(v) = get("plane_k") {
            cfg.plane_k =
                Some(v.parse().map_err(|e| Error::Config(format!("bad plane_k: {e}")))?);
        }
        if let Some(v) = get("plane_s") {
            cfg.plane_s = Some(v.parse()?);
        }
        cfg.raw = text.to_string();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanRow {
    pub k: u32,
    pub n: u64,
    pub a: u64,
    pub alpha: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertSummary {
    pub k: u32,
    pub certified: bool,
    pub ordering_ok: bool,
    pub count: u64,
    pub violation: Option<(u64, u64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PersistenceRow {
    pub user: usize,
    pub occurrence_stage: u32,
    pub checked: u64,
    pub violations: u64,
}

/// Intervals of one user-line occurrence stage, retained for persistence and
/// section checks after the stage itself is dropped.
#[derive(Clone, Debug)]
pub struct OccurrenceData {
    pub user: usize,
    pub k: u32,
    pub n: u64,
    pub count: u64,
    /// interval lo per piece index of that stage
    pub lows: Vec<Dyadic>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WkStageRow {
    pub k: u32,
    pub sampled: u64,
    pub all_ok: bool,
}

pub struct RunOutput {
    pub config: RunConfig,
    pub schedule: LineSchedule,
    /// one extra planned row beyond the built depth (for case ranges)
    pub plan: Vec<PlanRow>,
    pub ledger: ConstructionLedger,
    pub certificates: Vec<CertSummary>,
    pub deepest: Stage,
    pub penultimate: Option<Stage>,
    pub occurrences: Vec<OccurrenceData>,
    /// ancestors[user][deepest piece index] = piece index at the user's
    /// latest occurrence stage
    pub ancestors: Vec<Vec<u32>>,
    pub persistence: Vec<PersistenceRow>,
    /// per-stage opposite-end width sandwich over sampled parents
    pub wk_rows: Vec<WkStageRow>,
    pub mass_ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub config_echo: String,
    pub dim: usize,
    pub t: Rational,
    pub option: OptionKind,
    pub schedule: LineSchedule,
    pub plan: Vec<PlanRow>,
    pub ledger: ConstructionLedger,
    pub certificates: Vec<CertSummary>,
    pub persistence: Vec<PersistenceRow>,
    pub mass_ok: bool,
    pub files: BTreeMap<String, String>,
}

impl RunOutput {
    pub fn user_directions(&self) -> Vec<Direction> {
        self.schedule.user_lines.clone()
    }

    pub fn manifest(&self, files: BTreeMap<String, String>) -> RunManifest {
        let mut hasher = Sha256::new();
        hasher.update(self.config.raw.as_bytes());
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            config_sha256: format!("{:x}", hasher.finalize()),
            config_echo: self.config.raw.clone(),
            dim: self.config.d,
            t: self.config.t.clone(),
            option: self.config.option,
            schedule: self.schedule.clone(),
            plan: self.plan.clone(),
            ledger: self.ledger.clone(),
            certificates: self.certificates.clone(),
            persistence: self.persistence.clone(),
            mass_ok: self.mass_ok,
            files,
        }
    }

    pub fn all_certified(&self) -> bool {
        self.certificates.iter().all(|c| c.certified && c.ordering_ok)
    }

    pub fn persistence_ok(&self) -> bool {
        self.persistence.iter().all(|p| p.violations == 0)
    }

    /// Latest occurrence data of one user line.
    pub fn latest_occurrence(&self, user: usize) -> Option<&OccurrenceData> {
        self.occurrences.iter().filter(|o| o.user == user).last()
    }
}

/// Build the whole run: schedule, plan, stages, certificates, persistence.
pub fn run_construct(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let stages = cfg.stages();
    if stages == 0 {
        return Err(Error::Config("depth resolves to zero stages".into()));
    }
    let horizon = ((stages + 1) as usize).max(2 * cfg.cycle_len() as usize);
    let user_dirs: Vec<Direction> = cfg
        .lines
        .iter()
        .map(|l| Direction::from_ints(l))
        .collect::<Result<_>>()?;
    let schedule = build_schedule(&user_dirs, cfg.d, horizon)?;

    let mut planner = PlannerConfig::new(cfg.t.clone(), cfg.option, cfg.d);
    planner.growth = cfg.growth.clone();
    planner.case_split = cfg.case_split;
    planner.shape_to_target = cfg.shape_to_target;
    planner.piece_budget = cfg.max_pieces;
    planner.total_stages = stages;
    // shaping stops at the deepest user-line occurrence inside the run
    planner.shape_until = (0..cfg.lines.len())
        .flat_map(|u| schedule.occurrences(u))
        .filter(|&k| k <= stages)
        .max()
        .unwrap_or(stages);
    if let Some(kr) = cfg.k_ramp {
        planner.k_ramp = kr;
    }

    let mut state = PlanState::initial(cfg.d);
    let mut plan: Vec<PlanRow> = Vec::new();
    let mut ledger = ConstructionLedger::default();
    let mut certificates = Vec::new();
    let mut occurrences: Vec<OccurrenceData> = Vec::new();
    let mut ancestors: Vec<Vec<u32>> = vec![vec![0]; cfg.lines.len()];
    let mut anc_stage: Vec<Option<u32>> = vec![None; cfg.lines.len()];

    let mut prev = Stage::cube(&schedule)?;
    let mut penultimate: Option<Stage> = None;
    let mut mass_ok = true;
    let mut wk_rows: Vec<WkStageRow> = Vec::new();

    for k in 1..=stages + 1 {
        state.k = k;
        let (n, a) = match cfg.plan_override.as_ref().and_then(|rows| rows.get(k as usize - 1)) {
            Some(&(n, a)) => {
                validate_plan_row(&schedule, &state, n, a, cfg.case_split)?;
                (n, a)
            }
            None => plan_parameters(&schedule, &planner, &state)?,
        };
        plan.push(PlanRow { k, n, a, alpha: schedule.alpha(k) });

        if k <= stages {
            // opposite-end sandwich on sampled parents before they are consumed
            {
                let n_old = if k as usize > cfg.d {
                    ledger.n_of(k as i64 - cfg.d as i64)
                } else {
                    0
                };
                let alpha = schedule.alpha(k);
                let line = schedule.line(k);
                let count = prev.pieces.len();
                let step = (count / 32).max(1);
                let mut all_ok = true;
                let mut sampled = 0u64;
                for i in (0..count).step_by(step) {
                    let parent = prev.piece(i);
                    let rep = analysis::compute_wk(&parent, line, n_old, alpha)?;
                    sampled += 1;
                    if !rep.lower_ok || !rep.upper_ok {
                        all_ok = false;
                    }
                }
                wk_rows.push(WkStageRow { k, sampled, all_ok });
            }
            let mut stage = build_stage(
                &prev,
                &schedule,
                k,
                n,
                a,
                &BuildLimits { max_pieces: cfg.max_pieces },
            )?;
            assign_mass(&mut stage, &prev)?;
            if total_mass(&stage) != Rational::one() {
                mass_ok = false;
            }
            let cert = certify_injectivity(&stage, &schedule);
            let ordering_ok = verify_interval_ordering(&stage);
            certificates.push(CertSummary {
                k,
                certified: cert.certified,
                ordering_ok,
                count: stage.count(),
                violation: cert.violation,
            });
            ledger.push_stage(&stage, cert.certified);

            // ancestor bookkeeping per user line
            for u in 0..cfg.lines.len() {
                let mapped: Vec<u32> = stage
                    .pieces
                    .iter()
                    .map(|p| ancestors[u][p.parent as usize])
                    .collect();
                ancestors[u] = mapped;
            }
            if let crate::schedule::LineTag::User(u) = schedule.tag(k) {
                ancestors[u] = (0..stage.pieces.len() as u32).collect();
                anc_stage[u] = Some(k);
                occurrences.push(OccurrenceData {
                    user: u,
                    k,
                    n,
                    count: stage.count(),
                    lows: (0..stage.pieces.len()).map(|i| stage.interval_of(i).0).collect(),
                });
            }

            // planner state update
            let d = cfg.d;
            state.n_hist.remove(0);
            state.n_hist.push(n);
            debug_assert_eq!(state.n_hist.len(), d);
            state.a_prev = a;
            state.count_prev = stage.count();
            state.gap_prev = if k > planner.k_ramp
                && matches!(cfg.option, OptionKind::Capacity | OptionKind::MeasureZero)
            {
                let ratio = Rational::ratio(a as i64, n as i64);
                let target = &Rational::one() - &cfg.t;
                Some((&ratio - &target).abs())
            } else {
                None
            };

            penultimate = Some(std::mem::replace(&mut prev, stage));
            if k == 1 {
                penultimate = None; // the cube is not a built stage
            }
        }
    }

    // persistence: every deepest piece projects inside its ancestor interval
    // at each user line's latest occurrence
    let deepest = prev;
    let mut persistence = Vec::new();
    for (u, stage_k) in anc_stage.iter().enumerate() {
        let Some(stage_k) = stage_k else { continue };
        let occ = occurrences
            .iter()
            .filter(|o| o.user == u)
            .last()
            .expect("occurrence recorded");
        debug_assert_eq!(occ.k, *stage_k);
        let dir = &schedule.user_lines[u];
        let width = Rational::pow2(-(occ.n as i64));
        let mut violations = 0u64;
        for i in 0..deepest.pieces.len() {
            let anc = ancestors[u][i] as usize;
            let lo = occ.lows[anc].to_rational();
            let hi = &lo + &width;
            let (mn, mx) = deepest.piece_range(i, dir);
            if mn < lo || mx > hi {
                violations += 1;
            }
        }
        persistence.push(PersistenceRow {
            user: u,
            occurrence_stage: occ.k,
            checked: deepest.count(),
            violations,
        });
    }

    Ok(RunOutput {
        config: cfg.clone(),
        schedule,
        plan,
        ledger,
        certificates,
        deepest,
        penultimate,
        occurrences,
        ancestors,
        persistence,
        wk_rows,
        mass_ok,
    })
}

// ---------------------------------------------------------------------------
// Analysis drivers
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallRow {
    pub stage_k: u32,
    pub case: CaseTag,
    pub q: u32,
    pub samples: u64,
    pub lower_violations: u64,
    pub inconclusive: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallCheckReport {
    pub s_exponent: Rational,
    pub rows: Vec<BallRow>,
    pub total_samples: u64,
    pub total_lower_violations: u64,
    pub total_inconclusive: u64,
}

/// Exact comparison value ≤ 2^{-q·s}/q² with s = d−1+t rational.
fn le_ball_bound(value: &Rational, q: u32, d: usize, t: &Rational) -> bool {
    if value.is_zero() {
        return true;
    }
    let p = i64::try_from(t.numer().clone()).expect("t numerator");
    let r = u32::try_from(t.denom().clone()).expect("t denominator");
    // (value·q²)^r ≤ 2^{-q((d-1)r + p·q?)}: careful, exponent arithmetic:
    // value ≤ 2^{-q(d-1+p/r)}/q²  ⟺  (value·q²)^r·2^{q((d-1)r+p)} ≤ 1
    let qv = Rational::from_int(q as i64);
    let lhs = value * &(&qv * &qv);
    let mut acc = Rational::one();
    for _ in 0..r {
        acc = &acc * &lhs;
    }
    let shift = q as i64 * ((d as i64 - 1) * r as i64 + p);
    let scaled = &acc * &Rational::pow2(shift);
    scaled <= Rational::one()
}

/// Seeded ball queries in the Case-1/Case-2 ranges of the two deepest stages.
pub fn run_ball_checks(output: &RunOutput, samples_per_range: u32) -> Result<BallCheckReport> {
    let depth = output.ledger.depth();
    if depth < 2 {
        return Err(Error::InsufficientDepth { need: 2 });
    }
    let cfg = &output.config;
    let mut rng = SplitMix64::new(cfg.seed);
    let plan_of = |k: u32| -> (u64, u64) {
        let row = &output.plan[k as usize - 1];
        (row.n, row.a)
    };

    let mut rows: Vec<BallRow> = Vec::new();
    let anchors = [depth - 1, depth];
    for &anchor in &anchors {
        let stage = if anchor == depth {
            &output.deepest
        } else {
            output
                .penultimate
                .as_ref()
                .ok_or(Error::InsufficientDepth { need: 2 })?
        };
        let analyzer = BallAnalyzer::new(stage);
        let (nk, ak) = plan_of(anchor);
        let (nn, an) = plan_of(anchor + 1);
        let case1 = (nk + 1, nn - an);
        let case2 = (nk - ak + 1, nk);
        for (case, (qlo, qhi)) in [(CaseTag::Case1, case1), (CaseTag::Case2, case2)] {
            if qlo > qhi {
                return Err(Error::CaseRangeError { k: anchor, q: qlo as u32 });
            }
            let mut tally: BTreeMap<u32, (u64, u64, u64)> = BTreeMap::new();
            for _ in 0..samples_per_range {
                let q = (qlo + rng.below(qhi - qlo + 1)) as u32;
                let center: Vec<Rational> =
                    (0..cfg.d).map(|_| rng.unit_dyadic()).collect();
                let ball = BallQuery { center, q, case };
                let bounds = analyzer.bounds(&ball)?;
                let entry = tally.entry(q).or_insert((0, 0, 0));
                entry.0 += 1;
                if !le_ball_bound(&bounds.lower, q, cfg.d, &cfg.t) {
                    entry.1 += 1;
                }
                if !le_ball_bound(&bounds.upper, q, cfg.d, &cfg.t) {
                    entry.2 += 1;
                }
            }
            for (q, (samples, viol, inconclusive)) in tally {
                rows.push(BallRow {
                    stage_k: anchor,
                    case,
                    q,
                    samples,
                    lower_violations: viol,
                    inconclusive,
                });
            }
        }
    }
    let total_samples = rows.iter().map(|r| r.samples).sum();
    let total_lower_violations = rows.iter().map(|r| r.lower_violations).sum();
    let total_inconclusive = rows.iter().map(|r| r.inconclusive).sum();
    Ok(BallCheckReport {
        s_exponent: &Rational::from_int(cfg.d as i64 - 1) + &cfg.t,
        rows,
        total_samples,
        total_lower_violations,
        total_inconclusive,
    })
}

/// Box-count series of a user line: N(q) at q = 0 and at the occurrence
/// scales n_{k_i}, counted from each occurrence stage's own intervals.
pub fn projection_box_series(output: &RunOutput, user: usize) -> Result<Vec<(i64, u64)>> {
    let mut series = vec![(0i64, 1u64)];
    for occ in output.occurrences.iter().filter(|o| o.user == user) {
        let intervals: Vec<(Dyadic, Dyadic)> = occ
            .lows
            .iter()
            .map(|lo| (lo.clone(), lo + &Dyadic::pow2(-(occ.n as i64))))
            .collect();
        let n = analysis::box_count_intervals(&intervals, occ.n as u32);
        series.push((occ.n as i64, n));
    }
    if series.len() < 3 {
        return Err(Error::InsufficientDepth { need: 2 });
    }
    Ok(series)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisReports {
    pub recursion: Option<RecursionReport>,
    pub wk_all_ok: Option<bool>,
    pub series: Vec<(usize, ProjectionSeries)>,
    pub box_slopes: Vec<(usize, f64)>,
    pub balls: Option<BallCheckReport>,
    pub energy: Vec<(u32, EnergyReport)>,
    pub hard_failures: Vec<String>,
}

pub fn run_analysis(cfg: &RunConfig, checks: &[&str]) -> Result<(RunOutput, AnalysisReports)> {
    let output = run_construct(cfg)?;
    let mut reports = AnalysisReports {
        recursion: None,
        wk_all_ok: None,
        series: Vec::new(),
        box_slopes: Vec::new(),
        balls: None,
        energy: Vec::new(),
        hard_failures: Vec::new(),
    };
    let all = checks.is_empty();
    let want = |name: &str| all || checks.contains(&name);

    if !output.all_certified() {
        reports.hard_failures.push("injectivity certificate failed".into());
    }
    if !output.persistence_ok() {
        reports.hard_failures.push("persistence violation".into());
    }
    if !output.mass_ok {
        reports.hard_failures.push("stage masses do not sum to 1".into());
    }

    if want("recursion") {
        let rec = analysis::check_mk_recursion(&output.ledger, &output.schedule)?;
        if !rec.all_within {
            reports.hard_failures.push("counting recursion out of bounds".into());
        }
        reports.recursion = Some(rec);
    }
    if want("wk") {
        let ok = output.wk_rows.iter().all(|r| r.all_ok);
        if !ok {
            reports.hard_failures.push("opposite-end width sandwich failed".into());
        }
        reports.wk_all_ok = Some(ok);
    }
    if want("series") {
        for u in 0..cfg.lines.len() {
            let s = analysis::projection_measure_series(
                &output.ledger,
                &output.schedule,
                u,
                &cfg.t,
            )?;
            reports.series.push((u, s));
        }
    }
    if want("boxdim") {
        for u in 0..cfg.lines.len() {
            let series = projection_box_series(&output, u)?;
            let slope = analysis::dim_slope(&series)?;
            reports.box_slopes.push((u, slope));
        }
    }
    if want("balls") {
        let b = run_ball_checks(&output, cfg.ball_samples)?;
        if b.total_lower_violations > 0 {
            reports.hard_failures.push(format!(
                "{} ball lower-bound violations",
                b.total_lower_violations
            ));
        }
        reports.balls = Some(b);
    }
    if want("energy") {
        let s = (cfg.d - 1) as f64 + cfg.t.to_f64();
        if let Some(pen) = &output.penultimate {
            reports.energy.push((pen.k, analysis::energy(pen, s)?));
        }
        reports
            .energy
            .push((output.deepest.k, analysis::energy(&output.deepest, s)?));
    }
    Ok((output, reports))
}

// ---------------------------------------------------------------------------
// Plane-mode drivers
// ---------------------------------------------------------------------------

pub enum PlanesResult {
    Family(PlaneFamily),
    Dual { family: DualFamily, section_certified: bool, deepest_slope: f64 },
}

pub fn run_planes(cfg: &RunConfig, mode: &str) -> Result<(RunOutput, PlanesResult)> {
    let output = run_construct(cfg)?;
    match mode {
        "measure_zero" => {
            let d = cfg.plane_d.ok_or_else(|| Error::Config("plane_d required".into()))?;
            let k = cfg.plane_k.ok_or_else(|| Error::Config("plane_k required".into()))?;
            let fam =
                planes::measure_zero_family(&output.deepest, d, k, cfg.family_size)?;
            Ok((output, PlanesResult::Family(fam)))
        }
        "dimension" => {
            let d = cfg.plane_d.ok_or_else(|| Error::Config("plane_d required".into()))?;
            let k = cfg.plane_k.ok_or_else(|| Error::Config("plane_k required".into()))?;
            let s = cfg
                .plane_s
                .clone()
                .ok_or_else(|| Error::Config("plane_s required".into()))?;
            let fam = planes::dimension_family(d, k, &s, &output.deepest, cfg.family_size)?;
            Ok((output, PlanesResult::Family(fam)))
        }
        "dual" => {
            if cfg.verticals.is_empty() {
                return Err(Error::Config("dual mode needs verticals".into()));
            }
            let fam = planes::dual_hyperplanes(
                &output.deepest,
                &cfg.verticals,
                &output.schedule.user_lines,
                cfg.family_size,
            )?;
            // sections at every certified occurrence stage are the stage
            // intervals; re-check their disjointness from the retained data
            let mut section_certified = true;
            for occ in &output.occurrences {
                let ivs: Vec<(u64, Dyadic, Dyadic)> = occ
                    .lows
                    .iter()
                    .enumerate()
                    .map(|(i, lo)| (i as u64, lo.clone(), lo + &Dyadic::pow2(-(occ.n as i64))))
                    .collect();
                let cert = crate::construction::certify_intervals(
                    occ.k,
                    output.schedule.user_lines[occ.user].clone(),
                    ivs,
                );
                if !cert.certified {
                    section_certified = false;
                }
            }
            // deepest-stage section slope at the finest certified scales
            let mut slope = 0.0f64;
            for (vi, section) in fam.sections.iter().enumerate() {
                let user = output
                    .schedule
                    .user_lines
                    .iter()
                    .position(|u| u == &section.direction)
                    .ok_or_else(|| Error::LineNotInSchedule(format!("vertical {vi}")))?;
                let occ = output
                    .latest_occurrence(user)
                    .ok_or_else(|| Error::LineNotInSchedule(format!("user {user}")))?;
                let qs = [occ.n as u32 - 2, occ.n as u32 - 1, occ.n as u32];
                let series: Vec<(i64, u64)> = qs
                    .iter()
                    .map(|&q| {
                        (q as i64, analysis::box_count_rational_intervals(&section.intervals, q))
                    })
                    .collect();
                let s = analysis::dim_slope(&series)?;
                if s.abs() > slope.abs() {
                    slope = s;
                }
            }
            Ok((output, PlanesResult::Dual { family: fam, section_certified, deepest_slope: slope }))
        }
        other => Err(Error::Config(format!("unknown planes mode {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

fn rational_json(r: &Rational) -> String {
    format!("\"{}\"", r)
}

fn dyadic_json(d: &Dyadic) -> String {
    format!("\"{}\"", d)
}

fn direction_json(dir: &Direction) -> String {
    let comps: Vec<String> = dir.components().iter().map(|c| format!("\"{c}\"")).collect();
    format!("[{}]", comps.join(","))
}

/// One piece per line: {global_id, parent_id, stage, slabs, mass}.
pub fn pieces_jsonl(stage: &Stage) -> String {
    let mut out = String::new();
    for i in 0..stage.pieces.len() {
        let p = stage.piece(i);
        let slabs: Vec<String> = p
            .slabs
            .iter()
            .map(|s| {
                format!(
                    "{{\"direction\":{},\"lo\":{},\"hi\":{}}}",
                    direction_json(&s.direction),
                    dyadic_json(&s.lo),
                    dyadic_json(&s.hi)
                )
            })
            .collect();
        let _ = writeln!(
            out,
            "{{\"global_id\":{},\"parent_id\":{},\"stage\":{},\"slabs\":[{}],\"mass\":{}}}",
            p.global_id,
            p.parent_id,
            p.stage,
            slabs.join(","),
            rational_json(&p.mass)
        );
    }
    out
}

pub fn sections_csv(fam: &DualFamily) -> String {
    let mut out = String::from("vertical_index,lo,hi\n");
    for s in &fam.sections {
        for (lo, hi) in &s.intervals {
            let _ = writeln!(out, "{},{},{}", s.vertical, lo, hi);
        }
    }
    out
}

pub fn family_json(fam: &PlaneFamily) -> Result<String> {
    serde_json::to_string_pretty(fam)
        .map_err(|e| Error::InvalidInput(format!("serialize family: {e}")))
}

/// Write the standard construct outputs; returns the manifest.
pub fn write_run(output: &RunOutput, dir: &Path) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();

    let ledger_path = dir.join("ledger.csv");
    std::fs::write(&ledger_path, output.ledger.to_csv())?;
    files.insert("ledger".into(), file_name(&ledger_path));

    let pieces_path = dir.join(format!("pieces_stage{}.jsonl", output.deepest.k));
    std::fs::write(&pieces_path, pieces_jsonl(&output.deepest))?;
    files.insert("pieces".into(), file_name(&pieces_path));

    let cert_path = dir.join("certificates.json");
    let cert_json = serde_json::to_string_pretty(&output.certificates)
        .map_err(|e| Error::InvalidInput(format!("serialize certificates: {e}")))?;
    std::fs::write(&cert_path, cert_json)?;
    files.insert("certificates".into(), file_name(&cert_path));

    let manifest = output.manifest(files);
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidInput(format!("serialize manifest: {e}")))?;
    std::fs::write(dir.join("manifest.json"), manifest_json)?;
    Ok(manifest)
}

fn file_name(p: &Path) -> String {
    p.file_name().unwrap_or_default().to_string_lossy().into_owned()
}

/// Re-run deterministically up to `stage_k` and export that stage.
pub fn export_stage(cfg: &RunConfig, stage_k: u32, dir: &Path) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    cfg.depth = DepthPolicy::Stages(stage_k);
    let output = run_construct(&cfg)?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("pieces_stage{stage_k}.jsonl"));
    std::fs::write(&path, pieces_jsonl(&output.deepest))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::new(
            2,
            Rational::zero(),
            OptionKind::Unconstrained,
            vec![vec![1, 0]],
        );
        cfg.depth = DepthPolicy::Stages(4);
        cfg.raw = "test".into();
        cfg
    }

    #[test]
    fn parse_round_trip() {
        let text = "\
# demo config
d = 2
t = 1/2
option = capacity
lines = (1,0) ; (0,1)
cycles = 2
growth = 2
max_pieces = 200000
seed = 7
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.d, 2);
        assert_eq!(cfg.t, Rational::ratio(1, 2));
        assert_eq!(cfg.option, OptionKind::Capacity);
        assert_eq!(cfg.lines, vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn config_invariants_enforced() {
        let text = "d = 2\nt = 0\noption = measure_zero\nlines = (1,0)\n";
        assert!(RunConfig::parse(text).is_err());
        let text = "d = 2\nt = 1\noption = capacity\nlines = (1,0)\n";
        assert!(RunConfig::parse(text).is_err());
    }

    #[test]
    fn construct_small_run() {
        let cfg = small_cfg();
        let out = run_construct(&cfg).unwrap();
        assert_eq!(out.ledger.records.len(), 4);
        assert!(out.all_certified());
        assert!(out.persistence_ok());
        assert!(out.mass_ok);
        assert_eq!(out.plan.len(), 5); // one extra planned row
    }

    #[test]
    fn deterministic_outputs() {
        let cfg = small_cfg();
        let a = run_construct(&cfg).unwrap();
        let b = run_construct(&cfg).unwrap();
        let ma = serde_json::to_string(&a.manifest(BTreeMap::new())).unwrap();
        let mb = serde_json::to_string(&b.manifest(BTreeMap::new())).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(pieces_jsonl(&a.deepest), pieces_jsonl(&b.deepest));
        assert_eq!(a.ledger.to_csv(), b.ledger.to_csv());
    }
}
