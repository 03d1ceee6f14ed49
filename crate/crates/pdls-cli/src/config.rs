//! Config file schema and resolution.
//!
//! A config is TOML with sections `[experiment]`, `[topology]`,
//! `[problem]`, `[linesearch]`, `[run]` and `[output]`. [`resolve`]
//! checks every value and fills omitted keys with their defaults, so
//! printing a resolved config and parsing the output again is a
//! fixed point.

use std::fmt;

use pdls_core::dist::LsKind;
use pdls_core::saddle::{AlphaRule, LinesearchParams};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub linesearch: LinesearchSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// One of `poisson`, `covariance`, `custom`.
    pub name: String,
    /// Seeds instance generation; reruns with the same config are
    /// bit-identical.
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    /// One of `ring`, `path`, `complete`, `star`, `random_geometric`.
    pub kind: String,
    /// Placement seed, `random_geometric` only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self { kind: "ring".into(), seed: None }
    }
}

/// Experiment-specific sizes. Which keys apply depends on
/// `experiment.name`; setting one from the wrong experiment is an
/// error rather than silently ignored.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_agents: Option<usize>,
    // poisson
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_noise: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    // covariance, plus `dim` for custom
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_agent: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinesearchSection {
    pub beta: f64,
    pub delta_l: f64,
    pub delta_k: f64,
    pub mu: f64,
    pub gamma: f64,
    pub max_backtracks: usize,
    /// `adaptive` or `constant_one`.
    pub alpha_rule: String,
}

impl Default for LinesearchSection {
    fn default() -> Self {
        Self {
            beta: 2.0,
            delta_l: 0.5,
            delta_k: 0.4999,
            mu: 0.95,
            gamma: 0.99,
            max_backtracks: 60,
            alpha_rule: "adaptive".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub solvers: Vec<String>,
    pub eps: f64,
    pub max_iters: usize,
    /// Initial stepsize, absolute. Mutually exclusive with
    /// `tau0_cap_scale`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
    /// Initial stepsize as a fraction of the stepsize cap; the
    /// default when neither key is set is 0.1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau0_cap_scale: Option<f64>,
    /// Fixed stepsize for `alg2_const`; required when that solver
    /// is listed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_const: Option<f64>,
    /// Stepsize for `pgextra_const`; required when that solver is
    /// listed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            solvers: Vec::new(),
            eps: 1e-3,
            max_iters: 2000,
            tau0: None,
            tau0_cap_scale: None,
            tau_const: None,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Artifact directory. A relative path lands under
    /// `$PDLS_OUTPUT_ROOT` when that variable is set.
    pub dir: String,
    /// Also write PGM images (poisson only).
    pub write_images: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "pdls-out".into(), write_images: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Poisson,
    Covariance,
    /// Random strongly convex quadratics under a nonnegativity
    /// constraint; small and fast, meant for smoke tests.
    Custom,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Poisson => "poisson",
            ExperimentKind::Covariance => "covariance",
            ExperimentKind::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "poisson" => Some(ExperimentKind::Poisson),
            "covariance" => Some(ExperimentKind::Covariance),
            "custom" => Some(ExperimentKind::Custom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Ring,
    Path,
    Complete,
    Star,
    RandomGeometric,
}

impl TopologyKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "ring" => Some(TopologyKind::Ring),
            "path" => Some(TopologyKind::Path),
            "complete" => Some(TopologyKind::Complete),
            "star" => Some(TopologyKind::Star),
            "random_geometric" => Some(TopologyKind::RandomGeometric),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverId {
    PgExtraConst,
    Alg2Const,
    Alg2Sum,
    Alg2Min,
    Alg2SumW,
    Alg2MinW,
}

impl SolverId {
    pub const ALL: [SolverId; 6] = [
        SolverId::PgExtraConst,
        SolverId::Alg2Const,
        SolverId::Alg2Sum,
        SolverId::Alg2Min,
        SolverId::Alg2SumW,
        SolverId::Alg2MinW,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverId::PgExtraConst => "pgextra_const",
            SolverId::Alg2Const => "alg2_const",
            SolverId::Alg2Sum => "alg2_sum",
            SolverId::Alg2Min => "alg2_min",
            SolverId::Alg2SumW => "alg2_sum_w",
            SolverId::Alg2MinW => "alg2_min_w",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.as_str() == s)
    }

    /// Backtracking flavor; `None` for the PG-EXTRA baseline, which
    /// has no linesearch.
    pub fn ls_kind(self) -> Option<LsKind> {
        match self {
            SolverId::PgExtraConst => None,
            SolverId::Alg2Const => Some(LsKind::Constant),
            SolverId::Alg2Sum => Some(LsKind::Sum),
            SolverId::Alg2Min => Some(LsKind::Min),
            SolverId::Alg2SumW => Some(LsKind::SumW),
            SolverId::Alg2MinW => Some(LsKind::MinW),
        }
    }
}

/// Validated config with every applicable key made explicit.
#[derive(Debug)]
pub struct Resolved {
    pub file: ConfigFile,
    pub experiment: ExperimentKind,
    pub topology: TopologyKind,
    pub solvers: Vec<SolverId>,
    pub params: LinesearchParams,
}

impl Resolved {
    pub fn n_agents(&self) -> usize {
        self.file.problem.n_agents.unwrap()
    }
}

fn positive_finite(v: f64, key: &str) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        err(format!("{key} must be positive and finite"))
    }
}

/// Rejects `problem` keys that have no meaning for the chosen
/// experiment, then fills defaults for the ones that do.
fn resolve_problem(exp: ExperimentKind, p: &mut ProblemSection) -> Result<(), ConfigError> {
    let forbidden: &[(&str, bool)] = match exp {
        ExperimentKind::Poisson => &[
            ("dim", p.dim.is_some()),
            ("samples_per_agent", p.samples_per_agent.is_some()),
            ("lower", p.lower.is_some()),
            ("upper", p.upper.is_some()),
            ("sparsity", p.sparsity.is_some()),
        ],
        ExperimentKind::Covariance => &[
            ("side", p.side.is_some()),
            ("peak", p.peak.is_some()),
            ("background", p.background.is_some()),
            ("zero_noise", p.zero_noise.is_some()),
            ("lambda", p.lambda.is_some()),
        ],
        ExperimentKind::Custom => &[
            ("side", p.side.is_some()),
            ("peak", p.peak.is_some()),
            ("background", p.background.is_some()),
            ("zero_noise", p.zero_noise.is_some()),
            ("lambda", p.lambda.is_some()),
            ("samples_per_agent", p.samples_per_agent.is_some()),
            ("lower", p.lower.is_some()),
            ("upper", p.upper.is_some()),
            ("sparsity", p.sparsity.is_some()),
        ],
    };
    if let Some((key, _)) = forbidden.iter().find(|(_, set)| *set) {
        return err(format!("problem.{key} does not apply to the {} experiment", exp.as_str()));
    }

    match exp {
        ExperimentKind::Poisson => {
            p.n_agents.get_or_insert(4);
            let side = *p.side.get_or_insert(32);
            if side < 4 {
                return err("problem.side must be at least 4");
            }
            let peak = *p.peak.get_or_insert(20.0);
            positive_finite(peak, "problem.peak")?;
            let background = *p.background.get_or_insert(0.5);
            positive_finite(background, "problem.background")?;
            p.zero_noise.get_or_insert(false);
            let lambda = *p.lambda.get_or_insert(0.0);
            if !(lambda.is_finite() && lambda >= 0.0) {
                return err("problem.lambda must be nonnegative and finite");
            }
        }
        ExperimentKind::Covariance => {
            p.n_agents.get_or_insert(10);
            let dim = *p.dim.get_or_insert(5);
            if dim < 2 {
                return err("problem.dim must be at least 2");
            }
            let samples = *p.samples_per_agent.get_or_insert(1);
            if samples < 1 {
                return err("problem.samples_per_agent must be at least 1");
            }
            let lower = *p.lower.get_or_insert(0.7);
            let upper = *p.upper.get_or_insert(1.8);
            positive_finite(lower, "problem.lower")?;
            if !(upper.is_finite() && upper > lower) {
                return err("problem.upper must exceed problem.lower");
            }
            let sparsity = *p.sparsity.get_or_insert(0.2);
            if !(0.0..=1.0).contains(&sparsity) {
                return err("problem.sparsity must lie in [0, 1]");
            }
        }
        ExperimentKind::Custom => {
            p.n_agents.get_or_insert(5);
            let dim = *p.dim.get_or_insert(8);
            if dim < 1 {
                return err("problem.dim must be at least 1");
            }
        }
    }
    let n = p.n_agents.unwrap();
    if n < 3 {
        return err("problem.n_agents must be at least 3");
    }
    Ok(())
}

fn resolve_linesearch(ls: &LinesearchSection) -> Result<LinesearchParams, ConfigError> {
    let mut params = LinesearchParams::new(ls.beta, ls.delta_l, ls.delta_k, ls.mu, ls.gamma)
        .map_err(|e| ConfigError(format!("linesearch: {e}")))?;
    if ls.max_backtracks == 0 {
        return err("linesearch.max_backtracks must be at least 1");
    }
    params.max_backtracks = ls.max_backtracks;
    params.alpha_rule = match ls.alpha_rule.as_str() {
        "adaptive" => AlphaRule::Adaptive,
        "constant_one" => AlphaRule::ConstantOne,
        other => {
            return err(format!(
                "linesearch.alpha_rule must be \"adaptive\" or \"constant_one\", got \"{other}\""
            ))
        }
    };
    Ok(params)
}

fn resolve_run(run: &mut RunSection) -> Result<Vec<SolverId>, ConfigError> {
    if run.solvers.is_empty() {
        return err("run.solvers must list at least one solver");
    }
    let mut solvers = Vec::new();
    for name in &run.solvers {
        let id = SolverId::parse(name).ok_or_else(|| {
            let known: Vec<&str> = SolverId::ALL.iter().map(|s| s.as_str()).collect();
            ConfigError(format!("unknown solver \"{name}\"; known: {}", known.join(", ")))
        })?;
        if solvers.contains(&id) {
            return err(format!("solver \"{name}\" is listed twice"));
        }
        solvers.push(id);
    }

    if !(run.eps.is_finite() && run.eps >= 0.0) {
        return err("run.eps must be nonnegative and finite");
    }
    if run.max_iters == 0 {
        return err("run.max_iters must be at least 1");
    }
    match (run.tau0, run.tau0_cap_scale) {
        (Some(_), Some(_)) => {
            return err("run.tau0 and run.tau0_cap_scale are mutually exclusive")
        }
        (Some(t), None) => positive_finite(t, "run.tau0")?,
        (None, Some(s)) => positive_finite(s, "run.tau0_cap_scale")?,
        (None, None) => run.tau0_cap_scale = Some(0.1),
    }
    if solvers.contains(&SolverId::Alg2Const) {
        match run.tau_const {
            Some(t) => positive_finite(t, "run.tau_const")?,
            None => return err("alg2_const needs run.tau_const"),
        }
    }
    if solvers.contains(&SolverId::PgExtraConst) {
        match run.sigma {
            Some(s) => positive_finite(s, "run.sigma")?,
            None => return err("pgextra_const needs run.sigma"),
        }
    }
    Ok(solvers)
}

pub fn resolve(mut file: ConfigFile) -> Result<Resolved, ConfigError> {
    let experiment = ExperimentKind::parse(&file.experiment.name).ok_or_else(|| {
        ConfigError(format!(
            "experiment.name must be \"poisson\", \"covariance\" or \"custom\", got \"{}\"",
            file.experiment.name
        ))
    })?;

    let topology = TopologyKind::parse(&file.topology.kind).ok_or_else(|| {
        ConfigError(format!(
            "topology.kind must be one of ring, path, complete, star, random_geometric, \
             got \"{}\"",
            file.topology.kind
        ))
    })?;
    match topology {
        TopologyKind::RandomGeometric => {
            if file.topology.seed.is_none() {
                return err("random_geometric needs topology.seed");
            }
        }
        _ => {
            if file.topology.seed.is_some() {
                return err("topology.seed only applies to random_geometric");
            }
        }
    }

    resolve_problem(experiment, &mut file.problem)?;
    let params = resolve_linesearch(&file.linesearch)?;
    let solvers = resolve_run(&mut file.run)?;
    if file.output.dir.is_empty() {
        return err("output.dir must not be empty");
    }

    Ok(Resolved { file, experiment, topology, solvers, params })
}

pub fn parse(text: &str) -> Result<Resolved, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
    resolve(file)
}

/// TOML echo of a resolved config; parsing it back resolves to the
/// same thing.
pub fn normalized(r: &Resolved) -> String {
    toml::to_string_pretty(&r.file).expect("resolved config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [experiment]
        name = "custom"
        seed = 7

        [run]
        solvers = ["alg2_sum"]
    "#;

    #[test]
    fn minimal_config_fills_defaults() {
        let r = parse(MINIMAL).unwrap();
        assert_eq!(r.experiment, ExperimentKind::Custom);
        assert_eq!(r.n_agents(), 5);
        assert_eq!(r.file.problem.dim, Some(8));
        assert_eq!(r.file.run.tau0_cap_scale, Some(0.1));
        assert_eq!(r.file.run.eps, 1e-3);
        assert_eq!(r.solvers, vec![SolverId::Alg2Sum]);
    }

    #[test]
    fn normalized_form_is_a_fixed_point() {
        let first = normalized(&parse(MINIMAL).unwrap());
        let second = normalized(&parse(&first).unwrap());
        assert_eq!(first, second);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("seed = 7", "seed = 7\nfoo = 1");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn cross_experiment_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[problem]\npeak = 3.0\n");
        let e = parse(&text).unwrap_err();
        assert!(e.0.contains("problem.peak"), "{}", e.0);
    }

    #[test]
    fn const_solvers_need_their_stepsizes() {
        let text = MINIMAL.replace("alg2_sum", "alg2_const");
        assert!(parse(&text).unwrap_err().0.contains("tau_const"));
        let text = MINIMAL.replace("alg2_sum", "pgextra_const");
        assert!(parse(&text).unwrap_err().0.contains("sigma"));
    }

    #[test]
    fn tau0_rules_are_exclusive() {
        let text = format!("{MINIMAL}\ntau0 = 0.2\ntau0_cap_scale = 0.1\n");
        assert!(parse(&text).unwrap_err().0.contains("mutually exclusive"));
    }

    #[test]
    fn random_geometric_needs_a_seed() {
        let text = format!("{MINIMAL}\n[topology]\nkind = \"random_geometric\"\n");
        assert!(parse(&text).unwrap_err().0.contains("topology.seed"));
    }
}
