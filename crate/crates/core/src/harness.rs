//! Suite configuration, seeded orchestration of every check, and the report format.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charmod::{are_equivalent, character_eval, Arity, CharacterParams, SeriesId, Sl3Params, WEYL_MAPS};
use crate::error::{Error, Result};
use crate::flagdecomp::{closed_form_vs_oracle, cocycle_defect, sample_unipotent, BlockPattern, ParabolicElement, Route};
use crate::matcore::{derive_seed, random_group_element, rng_for, sample_scalar, Field, GroupElement, Mat, C64};
use crate::measures::{chart_by_name, shipped_charts, verify_invariance, verify_modular_ratio, CoordinateChart, Side};
use crate::operators::{
    compose_check, default_params, halfplane_preservation_check, kernel_covariance_check, random_params, route_check, unitarity_check,
    SeriesSpec, COMPOSE_TOL, FAMILY_SIZE, RESAMPLE_FACTOR, ROUTE_TOL,
};
use crate::report::{Status, Tally, VerificationReport};
use crate::repspaces::{gram_psd_check, TestFunction, PSD_FLOOR};

pub const REPORT_VERSION: &str = "1.0";
pub const EQUIVALENCE_TOL: f64 = 1e-10;
pub const COCYCLE_TOL: f64 = 1e-9;
pub const CHARACTER_TOL: f64 = 1e-12;
pub const COVARIANCE_TOL: f64 = 1e-8;
/// Conditioning bound for sampled group elements.
pub const GROUP_BOUND: f64 = 1e3;
/// Tighter bound for the elements whose norms are integrated.
pub const UNITARITY_BOUND: f64 = 10.0;
/// Points per group element in the half-plane sign test.
pub const SIGN_POINTS_PER_G: usize = 100;
/// Smallest block determinant accepted for sampled parabolic elements.
pub const BLOCK_DET_FLOOR: f64 = 0.1;
pub const GRAM_SIGMAS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Closed-form decomposition against the elimination oracle.
    DecompositionEquivalence,
    /// Cocycle identity of `k_g` and compatibility of the action.
    Cocycle,
    /// `T(g₁g₂) = T(g₁)T(g₂)`.
    Compose,
    /// `T(g)f` through the closed form and through the oracle.
    RouteAgreement,
    Unitarity,
    KernelCovariance,
    /// Left and right Haar densities.
    HaarInvariance,
    ModularRatio,
    /// Multiplicativity of characters, unit modulus for principal types.
    CharacterAlgebra,
    WeylOrbits,
    GramPsd,
    HalfPlane,
}

impl CheckKind {
    fn default_trials(self) -> usize {
        match self {
            CheckKind::DecompositionEquivalence => 1000,
            CheckKind::Cocycle | CheckKind::CharacterAlgebra => 500,
            CheckKind::Compose | CheckKind::RouteAgreement => 50,
            CheckKind::Unitarity | CheckKind::KernelCovariance => 10,
            CheckKind::HaarInvariance | CheckKind::ModularRatio => 200,
            CheckKind::WeylOrbits | CheckKind::HalfPlane => 10_000,
            CheckKind::GramPsd => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldName {
    Real,
    Complex,
}

impl From<FieldName> for Field {
    fn from(f: FieldName) -> Field {
        match f {
            FieldName::Real => Field::Real,
            FieldName::Complex => Field::Complex,
        }
    }
}

/// One entry of a suite configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    pub suite_name: String,
    pub check: CheckKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesId>,
    /// Block sizes such as `"2,1"`; with `field`, selects a decomposition case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldName>,
    /// Haar chart name (see `measures::shipped_charts`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<CharacterParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Sample points per group element.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Monte Carlo sample count override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Test functions per group element (unitarity) or per Gram matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
}

impl SuiteEntry {
    pub fn new(suite_name: &str, check: CheckKind) -> SuiteEntry {
        SuiteEntry {
            suite_name: suite_name.to_string(),
            check,
            series: None,
            pattern: None,
            field: None,
            chart: None,
            params: None,
            trials: None,
            points: None,
            seed: None,
            tolerance: None,
            samples: None,
            family: None,
            sigmas: None,
        }
    }

    pub fn series(mut self, id: SeriesId) -> SuiteEntry {
        self.series = Some(id);
        self
    }

    pub fn pattern(mut self, pattern: &str, field: FieldName) -> SuiteEntry {
        self.pattern = Some(pattern.to_string());
        self.field = Some(field);
        self
    }

    pub fn chart(mut self, chart: &str) -> SuiteEntry {
        self.chart = Some(chart.to_string());
        self
    }

    pub fn trials(mut self, n: usize) -> SuiteEntry {
        self.trials = Some(n);
        self
    }

    pub fn points(mut self, n: usize) -> SuiteEntry {
        self.points = Some(n);
        self
    }

    pub fn tolerance(mut self, t: f64) -> SuiteEntry {
        self.tolerance = Some(t);
        self
    }

    pub fn sigmas(mut self, s: &[f64]) -> SuiteEntry {
        self.sigmas = Some(s.to_vec());
        self
    }

    fn validate(&self) -> Result<()> {
        if let Some(t) = self.tolerance {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Config(format!("{}: tolerance must be a nonnegative number, got {t}", self.suite_name)));
            }
        }
        if self.trials == Some(0) || self.points == Some(0) || self.samples == Some(0) || self.family == Some(0) {
            return Err(Error::Config(format!("{}: counts must be positive", self.suite_name)));
        }
        if let Some(s) = &self.sigmas {
            if s.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(Error::Config(format!("{}: sigmas must lie in (0, 1)", self.suite_name)));
            }
        }
        if self.pattern.is_some() {
            self.decomposition_cases()?;
        }
        if let Some(c) = &self.chart {
            chart_by_name(c)?;
        }
        let needs_series = matches!(
            self.check,
            CheckKind::Compose
                | CheckKind::RouteAgreement
                | CheckKind::Unitarity
                | CheckKind::KernelCovariance
                | CheckKind::GramPsd
                | CheckKind::HalfPlane
        );
        if needs_series && self.series.is_none() {
            return Err(Error::Config(format!("{}: {:?} needs a series", self.suite_name, self.check)));
        }
        if let (Some(id), Some(p)) = (self.series, &self.params) {
            p.validate(id).map_err(|e| Error::Config(format!("{}: {e}", self.suite_name)))?;
        }
        Ok(())
    }

    fn spec(&self) -> Result<SeriesSpec> {
        let id = self.series.ok_or_else(|| Error::Config(format!("{}: no series", self.suite_name)))?;
        SeriesSpec::new(id, self.params.clone().unwrap_or_else(|| default_params(id)))
    }

    /// The decomposition cases selected by `pattern`/`field`/`series`, or all of them.
    fn decomposition_cases(&self) -> Result<Vec<BlockPattern>> {
        match (&self.pattern, self.series) {
            (Some(p), _) => {
                let field = self.field.map(Field::from).unwrap_or(Field::Complex);
                Ok(vec![BlockPattern::parse(p, field).map_err(|e| Error::Config(e.to_string()))?])
            }
            (None, Some(id)) => Ok(vec![id.pattern()]),
            (None, None) => Ok(decomposition_cases()),
        }
    }

    fn charts(&self) -> Result<Vec<CoordinateChart>> {
        match &self.chart {
            Some(c) => Ok(vec![chart_by_name(c)?]),
            None => Ok(shipped_charts()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    /// Master seed; suite `i` without its own seed runs with `derive_seed(seed, i)`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub suites: Vec<SuiteEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
}

impl SuiteConfig {
    pub fn new(seed: u64, suites: Vec<SuiteEntry>) -> SuiteConfig {
        SuiteConfig { seed, suites, output_path: None }
    }

    pub fn from_json(text: &str) -> Result<SuiteConfig> {
        let cfg: SuiteConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.suites.iter().try_for_each(SuiteEntry::validate)
    }

    pub fn suite_seed(&self, index: usize) -> u64 {
        self.suites[index].seed.unwrap_or_else(|| derive_seed(self.seed, index as u64))
    }
}

/// The file written by `verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config_echo: SuiteConfig,
    pub reports: Vec<VerificationReport>,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.reports.iter().all(VerificationReport::passed)
    }

    pub fn without_timing(&self) -> RunReport {
        RunReport {
            version: self.version.clone(),
            config_echo: self.config_echo.clone(),
            reports: self.reports.iter().map(VerificationReport::without_timing).collect(),
        }
    }
}

/// Runs every suite (concurrently) and returns reports in configuration order.
pub fn run_suite(config: &SuiteConfig) -> Result<Vec<VerificationReport>> {
    config.validate()?;
    Ok((0..config.suites.len())
        .into_par_iter()
        .map(|i| run_entry(&config.suites[i], config.suite_seed(i)))
        .collect())
}

pub fn run(config: &SuiteConfig) -> Result<RunReport> {
    Ok(RunReport {
        version: REPORT_VERSION.to_string(),
        config_echo: config.clone(),
        reports: run_suite(config)?,
    })
}

/// One suite; configuration problems found only now become failed reports.
pub fn run_entry(entry: &SuiteEntry, seed: u64) -> VerificationReport {
    let start = std::time::Instant::now();
    let mut report = match dispatch(entry, seed) {
        Ok(r) => r,
        Err(e) => {
            let mut t = Tally::new();
            t.record_failure("setup", e.to_string());
            t.finish(&entry.suite_name, entry.tolerance.unwrap_or(1.0), seed)
        }
    };
    report.suite_name = entry.suite_name.clone();
    report.seed = seed;
    if let Some(t) = entry.tolerance {
        report = with_tolerance(report, t);
    }
    report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    report
}

/// Re-judges a report against another tolerance.
pub fn with_tolerance(mut r: VerificationReport, tolerance: f64) -> VerificationReport {
    r.tolerance = tolerance;
    let pass = tolerance > 0.0 && r.measured_max_error.is_some_and(|e| e <= tolerance);
    r.status = if pass { Status::Pass } else { Status::Fail };
    r
}

/// Folds sub-reports into one suite: each becomes a case carrying its maximum.
fn fold(name: &str, parts: Vec<VerificationReport>, tolerance: f64, seed: u64) -> VerificationReport {
    let mut t = Tally::new();
    for p in parts {
        t.add_resamples(p.resamples);
        let note = p
            .details
            .iter()
            .filter_map(|d| d.note.clone())
            .take(3)
            .collect::<Vec<_>>()
            .join("; ");
        match p.measured_max_error {
            Some(e) if note.is_empty() => t.record(p.suite_name, e),
            Some(e) => t.record_with_note(p.suite_name, e, note),
            None => t.record_failure(p.suite_name, note),
        }
    }
    t.finish(name, tolerance, seed)
}

fn dispatch(entry: &SuiteEntry, seed: u64) -> Result<VerificationReport> {
    let trials = entry.trials.unwrap_or(entry.check.default_trials());
    let name = entry.suite_name.as_str();
    Ok(match entry.check {
        CheckKind::DecompositionEquivalence => decomposition_equivalence(name, &entry.decomposition_cases()?, trials, seed),
        CheckKind::Cocycle => cocycle(name, &entry.decomposition_cases()?, trials, seed),
        CheckKind::Compose => {
            let spec = entry.spec()?;
            compose_suite(name, &spec, trials, entry.points.unwrap_or(20), seed)
        }
        CheckKind::RouteAgreement => {
            let spec = entry.spec()?;
            route_suite(name, &spec, trials, entry.points.unwrap_or(20), seed)
        }
        CheckKind::Unitarity => {
            let spec = entry.spec()?;
            unitarity_suite(name, &spec, trials, entry.family, entry.samples, seed)
        }
        CheckKind::KernelCovariance => {
            let spec = entry.spec()?;
            let parts = (0..trials)
                .map(|i| {
                    let g = random_group_element(spec.n(), spec.field(), derive_seed(seed, i as u64), GROUP_BOUND)?;
                    Ok(kernel_covariance_check(&format!("g {i}"), &spec, &g, entry.points.unwrap_or(20), derive_seed(seed, !(i as u64)), COVARIANCE_TOL))
                })
                .collect::<Result<Vec<_>>>()?;
            fold(name, parts, COVARIANCE_TOL, seed)
        }
        CheckKind::HaarInvariance => {
            let mut parts = Vec::new();
            for (c, chart) in entry.charts()?.iter().enumerate() {
                for (s, side) in [Side::Left, Side::Right].into_iter().enumerate() {
                    parts.push(verify_invariance(chart, side, trials, derive_seed(seed, (2 * c + s) as u64)));
                }
            }
            fold(name, parts, crate::measures::INVARIANCE_TOL, seed)
        }
        CheckKind::ModularRatio => {
            let parts = entry
                .charts()?
                .iter()
                .enumerate()
                .map(|(c, chart)| verify_modular_ratio(chart, trials, derive_seed(seed, c as u64)))
                .collect();
            fold(name, parts, crate::measures::MODULAR_RATIO_TOL, seed)
        }
        CheckKind::CharacterAlgebra => {
            let ids = match entry.series {
                Some(id) => vec![id],
                None => SeriesId::ALL.to_vec(),
            };
            let parts = ids
                .iter()
                .enumerate()
                .map(|(i, &id)| {
                    let params = if entry.series.is_some() { entry.params.clone() } else { None };
                    character_algebra(id, params, trials, derive_seed(seed, i as u64))
                })
                .collect();
            fold(name, parts, CHARACTER_TOL, seed)
        }
        CheckKind::WeylOrbits => {
            let real = entry.field.map(|f| vec![f == FieldName::Real]).unwrap_or_else(|| vec![false, true]);
            weyl_orbits(name, &real, trials, seed)
        }
        CheckKind::GramPsd => {
            let id = entry.spec()?.id;
            let sigmas = entry.sigmas.clone().unwrap_or(GRAM_SIGMAS.to_vec());
            gram_suite(name, id, entry.params.clone(), &sigmas, entry.family.unwrap_or(FAMILY_SIZE), entry.samples, seed)
        }
        CheckKind::HalfPlane => {
            let spec = entry.spec()?;
            let groups = trials.div_ceil(SIGN_POINTS_PER_G);
            let parts = (0..groups)
                .map(|i| {
                    let g = random_group_element(spec.n(), spec.field(), derive_seed(seed, i as u64), GROUP_BOUND)?;
                    let pts = SIGN_POINTS_PER_G.min(trials - i * SIGN_POINTS_PER_G);
                    Ok(halfplane_preservation_check(&format!("g {i}"), &spec, &g, pts, derive_seed(seed, !(i as u64))))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut r = fold(name, parts, 0.5, seed);
            r.trials_run = trials as u64;
            r
        }
    })
}

/// Every pattern with a closed form, over each field it is used with.
pub fn decomposition_cases() -> Vec<BlockPattern> {
    let p = |b: &[usize], f| BlockPattern::new(b, f).expect("supported pattern");
    vec![
        p(&[1, 1], Field::Complex),
        p(&[1, 1], Field::Real),
        p(&[1, 1, 1], Field::Complex),
        p(&[1, 1, 1], Field::Real),
        p(&[2, 1], Field::Complex),
        p(&[2, 1], Field::Real),
        p(&[1, 1, 1, 1], Field::Complex),
        p(&[3, 1], Field::Complex),
        p(&[2, 1, 1], Field::Complex),
        p(&[2, 2], Field::Complex),
    ]
}

fn case_label(p: &BlockPattern) -> String {
    format!("sl{}{}-{}", p.n(), if p.field() == Field::Real { "r" } else { "c" }, p.label())
}

/// Retries `f` on singular draws, up to `RESAMPLE_FACTOR` times.
fn with_resampling<T>(rng: &mut ChaCha8Rng, resamples: &mut u64, mut f: impl FnMut(&mut ChaCha8Rng) -> Result<T>) -> Result<T> {
    for _ in 0..RESAMPLE_FACTOR {
        match f(rng) {
            Err(Error::DecompositionSingular { .. } | Error::ZeroDiagonal(_)) => *resamples += 1,
            r => return r,
        }
    }
    Err(Error::RejectionExhausted(RESAMPLE_FACTOR))
}

fn draw_g(rng: &mut ChaCha8Rng, n: usize, field: Field) -> Result<GroupElement> {
    random_group_element(n, field, rng.random(), GROUP_BOUND)
}

fn per_case(
    name: &str,
    cases: &[BlockPattern],
    trials: usize,
    seed: u64,
    tolerance: f64,
    trial: impl Fn(&BlockPattern, &mut ChaCha8Rng) -> Result<f64> + Sync,
) -> VerificationReport {
    let parts = cases
        .par_iter()
        .enumerate()
        .map(|(c, pattern)| {
            let mut t = Tally::new().keep_details(4);
            let mut resamples = 0;
            for i in 0..trials {
                let mut rng = rng_for(derive_seed(seed, c as u64), i as u64);
                match with_resampling(&mut rng, &mut resamples, |r| trial(pattern, r)) {
                    Ok(e) => t.record(format!("trial {i}"), e),
                    Err(e) => t.record_failure(format!("trial {i}"), e.to_string()),
                }
            }
            t.add_resamples(resamples);
            t.finish(&case_label(pattern), tolerance, seed)
        })
        .collect();
    let mut r = fold(name, parts, tolerance, seed);
    r.trials_run = (trials * cases.len()) as u64;
    r
}

pub fn decomposition_equivalence(name: &str, cases: &[BlockPattern], trials: usize, seed: u64) -> VerificationReport {
    per_case(name, cases, trials, seed, EQUIVALENCE_TOL, |pattern, rng| {
        let g = draw_g(rng, pattern.n(), pattern.field())?;
        let z = sample_unipotent(rng, pattern);
        closed_form_vs_oracle(&z, &g)
    })
}

pub fn cocycle(name: &str, cases: &[BlockPattern], trials: usize, seed: u64) -> VerificationReport {
    per_case(name, cases, trials, seed, COCYCLE_TOL, |pattern, rng| {
        let g1 = draw_g(rng, pattern.n(), pattern.field())?;
        let g2 = draw_g(rng, pattern.n(), pattern.field())?;
        let z = sample_unipotent(rng, pattern);
        let (k, zerr) = cocycle_defect(&z, &g1, &g2, Route::ClosedForm)?;
        Ok(k.max(zerr))
    })
}

fn group_pair(spec: &SeriesSpec, seed: u64, i: usize) -> Result<(GroupElement, GroupElement)> {
    let g1 = random_group_element(spec.n(), spec.field(), derive_seed(seed, 2 * i as u64), GROUP_BOUND)?;
    let g2 = random_group_element(spec.n(), spec.field(), derive_seed(seed, 2 * i as u64 + 1), GROUP_BOUND)?;
    Ok((g1, g2))
}

pub fn compose_suite(name: &str, spec: &SeriesSpec, pairs: usize, points: usize, seed: u64) -> VerificationReport {
    let family = spec.family(FAMILY_SIZE);
    let parts: Vec<VerificationReport> = (0..pairs)
        .into_par_iter()
        .map(|i| match group_pair(spec, seed, i) {
            Ok((g1, g2)) => compose_check(&format!("pair {i}"), spec, &g1, &g2, family[i % family.len()].as_ref(), points, derive_seed(seed, !(i as u64)), COMPOSE_TOL),
            Err(e) => failed(&format!("pair {i}"), e),
        })
        .collect();
    let mut r = fold(name, parts, COMPOSE_TOL, seed);
    r.trials_run = (pairs * points) as u64;
    r
}

pub fn route_suite(name: &str, spec: &SeriesSpec, trials: usize, points: usize, seed: u64) -> VerificationReport {
    let family = spec.family(FAMILY_SIZE);
    let parts: Vec<VerificationReport> = (0..trials)
        .into_par_iter()
        .map(|i| match group_pair(spec, seed, i) {
            Ok((g, _)) => route_check(&format!("g {i}"), spec, &g, family[i % family.len()].as_ref(), points, derive_seed(seed, !(i as u64)), ROUTE_TOL),
            Err(e) => failed(&format!("g {i}"), e),
        })
        .collect();
    let mut r = fold(name, parts, ROUTE_TOL, seed);
    r.trials_run = (trials * points) as u64;
    r
}

fn failed(name: &str, e: Error) -> VerificationReport {
    let mut t = Tally::new();
    t.record_failure(name, e.to_string());
    t.finish(name, 1.0, 0)
}

/// Norm preservation for `trials` group elements. Kernel spaces test one family
/// member per element (cycling through the family); weighted-L² spaces test
/// every member unless `per_g` says otherwise.
pub fn unitarity_suite(name: &str, spec: &SeriesSpec, trials: usize, per_g: Option<usize>, samples: Option<usize>, seed: u64) -> VerificationReport {
    let family = spec.family(FAMILY_SIZE);
    let per_g = per_g.unwrap_or(if spec.space.is_kernel() { 1 } else { family.len() }).min(family.len());
    let mut tol = crate::operators::UNITARITY_TOL;
    let parts: Vec<VerificationReport> = (0..trials)
        .map(|i| {
            let qseed = derive_seed(seed, !(i as u64));
            let mut quad = spec.default_quadrature(qseed);
            if let (Some(n), crate::repspaces::Scheme::MonteCarlo { samples: s, .. }) = (samples, &mut quad.scheme) {
                *s = n;
            }
            match random_group_element(spec.n(), spec.field(), derive_seed(seed, i as u64), UNITARITY_BOUND) {
                Ok(g) => {
                    let fs: Vec<&dyn TestFunction> = (0..per_g).map(|j| family[(i + j) % family.len()].as_ref()).collect();
                    let r = unitarity_check(&format!("g {i}"), spec, &g, &fs, &quad, None);
                    tol = r.tolerance;
                    r
                }
                Err(e) => failed(&format!("g {i}"), e),
            }
        })
        .collect();
    fold(name, parts, tol, seed)
}

fn random_parabolic(pattern: &BlockPattern, rng: &mut ChaCha8Rng) -> Result<ParabolicElement> {
    let n = pattern.n();
    let mut m = Mat::zeros(n);
    for (p, q) in pattern.parabolic_positions() {
        m[(p, q)] = sample_scalar(rng, pattern.field());
    }
    let dets = pattern.block_dets(&m);
    // Nearly singular blocks lose digits to cancellation; redraw them.
    if let Some(d) = dets.iter().find(|d| d.norm() < BLOCK_DET_FLOOR) {
        return Err(Error::ZeroDiagonal(d.norm()));
    }
    let d: C64 = dets.iter().product();
    for q in 0..n {
        m[(0, q)] /= d;
    }
    ParabolicElement::new(pattern.clone(), m)
}

/// `χ(k₁k₂) = χ(k₁)χ(k₂)` and, for principal types, `|χ| = 1`.
pub fn character_algebra(id: SeriesId, params: Option<CharacterParams>, trials: usize, seed: u64) -> VerificationReport {
    let mut t = Tally::new().keep_details(4);
    let pattern = id.pattern();
    let mut resamples = 0;
    for i in 0..trials {
        let mut rng = rng_for(seed, i as u64);
        let p = params.clone().unwrap_or_else(|| random_params(id, &mut rng));
        let res = with_resampling(&mut rng, &mut resamples, |rng| {
            let k1 = random_parabolic(&pattern, rng)?;
            let k2 = random_parabolic(&pattern, rng)?;
            let (a, b, ab) = (character_eval(id, &p, &k1)?, character_eval(id, &p, &k2)?, character_eval(id, &p, &k1.compose(&k2))?);
            let scale = ab.norm().max((a * b).norm()).max(1e-300);
            let mut e = (ab - a * b).norm() / scale;
            if id.is_principal_type() {
                e = e.max((a.norm() - 1.0).abs()).max((ab.norm() - 1.0).abs());
            }
            Ok(e)
        });
        match res {
            Ok(e) => t.record(format!("pair {i}"), e),
            Err(Error::Unsupported(_)) => {
                // The Gelfand–Graev multiplier is not a character of block data alone.
                let mut t = Tally::new();
                t.note("skipped", format!("{id} has no block character"));
                let mut r = t.finish(id.as_str(), CHARACTER_TOL, seed);
                r.status = Status::Skipped;
                return r;
            }
            Err(e) => t.record_failure(format!("pair {i}"), e.to_string()),
        }
    }
    t.add_resamples(resamples);
    t.finish(id.as_str(), CHARACTER_TOL, seed)
}

fn reduce(p: Sl3Params, real: bool) -> Sl3Params {
    if real {
        Sl3Params::new(p.m2.rem_euclid(2), p.m3.rem_euclid(2), p.rho2, p.rho3)
    } else {
        p
    }
}

fn same(a: &Sl3Params, b: &Sl3Params) -> bool {
    let eq = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs());
    a.m2 == b.m2 && a.m3 == b.m3 && eq(a.rho2, b.rho2) && eq(a.rho3, b.rho3)
}

/// Orbit closure and size, then reflexivity and symmetry of `are_equivalent`
/// on every series. Each violation counts 1.
pub fn weyl_orbits(name: &str, real: &[bool], trials: usize, seed: u64) -> VerificationReport {
    let mut t = Tally::new().keep_details(8);
    let mut violations = 0u64;
    for (r, &is_real) in real.iter().enumerate() {
        let id = if is_real { SeriesId::Sl3rPrincipal } else { SeriesId::Sl3cPrincipal };
        for i in 0..trials {
            let mut rng = rng_for(derive_seed(seed, r as u64), i as u64);
            let range = if is_real { 0..=1 } else { -5..=5 };
            // Small rational ρ make coincidences (and smaller orbits) common.
            let rho = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { rng.random_range(-2..=2) as f64 / 2.0 } else { rng.random_range(-3.0..3.0) };
            let p = Sl3Params::new(rng.random_range(range.clone()), rng.random_range(range), rho(&mut rng), rho(&mut rng));
            let orbit = crate::charmod::weyl_orbit_sl3(p, is_real);
            let closed = orbit.iter().all(|q| WEYL_MAPS.iter().all(|w| orbit.iter().any(|o| same(o, &reduce(w(*q), is_real)))));
            let divides = 6 % orbit.len() == 0;
            let cp = |q: &Sl3Params| CharacterParams::new(&[q.m2, q.m3], &[q.rho2, q.rho3], &[]);
            let members_equivalent = orbit.iter().all(|q| are_equivalent(id, &cp(&p), &cp(q)) && are_equivalent(id, &cp(q), &cp(&p)));
            if !(closed && divides && members_equivalent) {
                violations += 1;
                t.record_with_note(format!("{id} tuple {i}"), 1.0, format!("{p:?}: closed {closed}, size {}, equivalent {members_equivalent}", orbit.len()));
            } else {
                t.record(format!("{id} tuple {i}"), 0.0);
            }
        }
    }
    for (s, id) in SeriesId::ALL.into_iter().enumerate() {
        for i in 0..100 {
            let mut rng = rng_for(derive_seed(seed, 1000 + s as u64), i);
            let a = random_params(id, &mut rng);
            let b = if rng.random::<bool>() { random_params(id, &mut rng) } else { a.clone() };
            let ok = are_equivalent(id, &a, &a) && are_equivalent(id, &a, &b) == are_equivalent(id, &b, &a);
            t.record(format!("{id} pair {i}"), if ok { 0.0 } else { 1.0 });
            if !ok {
                violations += 1;
            }
        }
    }
    if violations > 0 {
        t.note("violations", violations.to_string());
    }
    t.finish(name, 0.5, seed)
}

/// Gram PSD checks of `family` shipped functions at each σ (all σ entries of
/// the series set to the same value).
pub fn gram_suite(
    name: &str,
    id: SeriesId,
    params: Option<CharacterParams>,
    sigmas: &[f64],
    family: usize,
    samples: Option<usize>,
    seed: u64,
) -> VerificationReport {
    let parts = sigmas
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let label = format!("sigma {sigma}");
            let run = || -> Result<VerificationReport> {
                let mut p = params.clone().unwrap_or_else(|| default_params(id));
                p.sigma.iter_mut().for_each(|s| *s = sigma);
                let spec = SeriesSpec::new(id, p)?;
                let fs = spec.family(family);
                let refs: Vec<&dyn TestFunction> = fs.iter().map(|f| f.as_ref()).collect();
                let mut quad = spec.default_quadrature(derive_seed(seed, i as u64));
                if let (Some(n), crate::repspaces::Scheme::MonteCarlo { samples: s, .. }) = (samples, &mut quad.scheme) {
                    *s = n;
                }
                gram_psd_check(&label, &spec.space, &refs, &quad, PSD_FLOOR)
            };
            run().unwrap_or_else(|e| failed(&label, e))
        })
        .collect();
    fold(name, parts, PSD_FLOOR, seed)
}

/// One row of the series catalogue.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CatalogueEntry {
    pub series_id: SeriesId,
    pub group: String,
    pub pattern: String,
    pub coordinates: String,
    pub arity: Arity,
    pub space: &'static str,
    pub anchor: &'static str,
}

pub fn list_catalogue() -> Vec<CatalogueEntry> {
    SeriesId::ALL
        .into_iter()
        .map(|id| {
            let spec = SeriesSpec::with_defaults(id);
            let coordinates = match &spec.model {
                crate::operators::CoordModel::Standard => format!("Z_{}", id.pattern().label()),
                crate::operators::CoordModel::Fibered { fibration } => format!("Z_{} fibered ({fibration:?})", id.pattern().label()),
                crate::operators::CoordModel::HalfPlane { .. } => "half-plane".to_string(),
                crate::operators::CoordModel::GelfandGraev => "(2,1)-frame on Z1: z21 complex, (x31, x32) real".to_string(),
            };
            CatalogueEntry {
                series_id: id,
                group: format!("SL{}({})", id.n(), id.field()),
                pattern: id.pattern().label(),
                coordinates,
                arity: id.arity(),
                space: spec.space_kind(),
                anchor: id.formula(),
            }
        })
        .collect()
}
