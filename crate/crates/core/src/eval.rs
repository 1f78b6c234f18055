//! ROC curves, screening metrics, and the Monte Carlo experiment runner.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use toml::{Table, Value};

use crate::design::{
    gen_response_linear_with, gen_response_logistic_with, materialize_cov, sample_beta_fixed_with,
    sample_beta_rw_with, support_of, CovKind, CovSpec, GaussianSampler, RareWeakSpec, SignScheme,
};
use crate::error::{param, Error, Result};
use crate::factor::{adjust_auto, KRule};
use crate::fmt::shortest;
use crate::glm::{score_facar_glm, score_mr_glm, Family, MarginalVariant};
use crate::rng::{rep_stream, Purpose};
use crate::scores::{
    rank_descending, rank_facar, score_famr, score_holp, score_lsr_block, score_mr, score_rrcs,
    FacarParams, Method, RankingResult,
};

/// Points of the averaged ROC grid: FPR in {0, 0.01, ..., 1}.
pub const ROC_GRID: usize = 101;

fn check_support(p: usize, support: &[usize]) -> Result<()> {
    if support.is_empty() || support.len() >= p {
        return param(format!(
            "support must be a nonempty proper subset; got {} of {p} variables",
            support.len()
        ));
    }
    if let Some(&j) = support.iter().find(|&&j| j >= p) {
        return param(format!("support index {j} out of range"));
    }
    Ok(())
}

/// `(FPR, TPR)` after each distinct score cutoff, with tied variables entering
/// together. Starts at (0,0) and ends at (1,1).
pub fn roc_curve(scores: &[f64], support: &[usize]) -> Result<Vec<(f64, f64)>> {
    let p = scores.len();
    check_support(p, support)?;
    let mut is_signal = vec![false; p];
    for &j in support {
        is_signal[j] = true;
    }
    let pos = is_signal.iter().filter(|s| **s).count() as f64;
    let neg = p as f64 - pos;
    let order = rank_descending(scores);
    let same = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &j) in order.iter().enumerate() {
        if is_signal[j] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_in_group = order.get(i + 1).is_none_or(|&next| !same(scores[next], scores[j]));
        if last_in_group {
            curve.push((fp as f64 / neg, tp as f64 / pos));
        }
    }
    Ok(curve)
}

/// TPR at `fpr`, linear between vertices; on a vertical run the top wins.
fn tpr_at(curve: &[(f64, f64)], fpr: f64) -> f64 {
    let i = curve.partition_point(|pt| pt.0 <= fpr);
    if i == 0 {
        return curve[0].1;
    }
    let (x0, y0) = curve[i - 1];
    match curve.get(i) {
        Some(&(x1, y1)) if x0 < fpr => y0 + (y1 - y0) * (fpr - x0) / (x1 - x0),
        _ => y0,
    }
}

pub fn roc_grid() -> Vec<f64> {
    (0..ROC_GRID).map(|k| k as f64 / (ROC_GRID - 1) as f64).collect()
}

/// A single curve sampled on the fixed FPR grid.
pub fn resample_roc(curve: &[(f64, f64)]) -> Vec<f64> {
    roc_grid().into_iter().map(|f| tpr_at(curve, f)).collect()
}

/// Vertical averaging on the 101-point FPR grid.
pub fn average_roc(curves: &[Vec<(f64, f64)>]) -> Result<Vec<(f64, f64)>> {
    if curves.is_empty() {
        return param("need at least one ROC curve");
    }
    let sampled: Vec<Vec<f64>> = curves.iter().map(|c| resample_roc(c)).collect();
    Ok(average_sampled(&sampled))
}

fn average_sampled(sampled: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let m = sampled.len() as f64;
    roc_grid()
        .into_iter()
        .enumerate()
        .map(|(k, f)| (f, sampled.iter().map(|s| s[k]).sum::<f64>() / m))
        .collect()
}

/// Trapezoidal area under a curve.
pub fn auc(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScreeningMetrics {
    /// All signals ranked within the retained set.
    pub sure: bool,
    /// Signals ranked below the cutoff.
    pub type2: usize,
    /// Largest signal rank (1-based).
    pub ss_size: usize,
}

pub fn screening_metrics(scores: &[f64], support: &[usize], retain: usize) -> Result<ScreeningMetrics> {
    let p = scores.len();
    if retain == 0 || retain > p {
        return param(format!("retain = {retain} must lie in [1, {p}]"));
    }
    if support.is_empty() {
        return param("support is empty");
    }
    if let Some(&j) = support.iter().find(|&&j| j >= p) {
        return param(format!("support index {j} out of range"));
    }
    let mut rank = vec![0; p];
    for (pos, j) in rank_descending(scores).into_iter().enumerate() {
        rank[j] = pos + 1;
    }
    let type2 = support.iter().filter(|&&j| rank[j] > retain).count();
    let ss_size = support.iter().map(|&j| rank[j]).max().unwrap_or(0);
    Ok(ScreeningMetrics { sure: type2 == 0, type2, ss_size })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalSpec {
    /// First `s` coordinates i.i.d. N(0, eta^2).
    Fixed { s: usize, eta: f64 },
    /// Rare/Weak: sparsity `p^-theta`, strength `r`.
    RareWeak { theta: f64, r: f64, sign_scheme: SignScheme },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseModel {
    Linear { sigma: f64 },
    Logistic { intercept: f64 },
}

/// A fully resolved simulation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub design: CovKind,
    pub n: usize,
    pub p: usize,
    pub signal: SignalSpec,
    pub response: ResponseModel,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub seed: u64,
    pub retain: usize,
    pub facar: FacarParams,
    pub holp_ridge: f64,
    /// Draw beta once and reuse it for every repetition.
    pub fix_beta: bool,
}

/// Collects every schema violation instead of stopping at the first.
struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn table<'a>(&mut self, t: &'a Table, key: &str, path: &str, required: bool) -> Option<&'a Table> {
        match t.get(key) {
            Some(Value::Table(inner)) => Some(inner),
            Some(_) => {
                self.errors.push(format!("{path}: expected a table"));
                None
            }
            None => {
                if required {
                    self.errors.push(format!("{path}: missing"));
                }
                None
            }
        }
    }

    fn float(&mut self, t: &Table, key: &str, path: &str) -> Option<f64> {
        match t.get(key) {
            Some(Value::Float(x)) => Some(*x),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(_) => {
                self.errors.push(format!("{path}: expected a number"));
                None
            }
            None => None,
        }
    }

    fn uint(&mut self, t: &Table, key: &str, path: &str) -> Option<u64> {
        match t.get(key) {
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as u64),
            Some(_) => {
                self.errors.push(format!("{path}: expected a nonnegative integer"));
                None
            }
            None => None,
        }
    }

    fn string<'a>(&mut self, t: &'a Table, key: &str, path: &str) -> Option<&'a str> {
        match t.get(key) {
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.errors.push(format!("{path}: expected a string"));
                None
            }
            None => None,
        }
    }

    fn boolean(&mut self, t: &Table, key: &str, path: &str) -> Option<bool> {
        match t.get(key) {
            Some(Value::Boolean(b)) => Some(*b),
            Some(_) => {
                self.errors.push(format!("{path}: expected true or false"));
                None
            }
            None => None,
        }
    }

    fn require<T>(&mut self, v: Option<T>, t: &Table, key: &str, path: &str) -> Option<T> {
        if v.is_none() && !t.contains_key(key) {
            self.errors.push(format!("{path}: missing"));
        }
        v
    }

    fn unknown(&mut self, t: &Table, allowed: &[&str], prefix: &str) {
        for key in t.keys() {
            if !allowed.contains(&key.as_str()) {
                let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
                self.errors.push(format!("{path}: unknown key"));
            }
        }
    }
}

const DESIGN_KINDS: [&str; 6] = [
    "tridiagonal",
    "autoregressive",
    "equal_correlation",
    "two_factor",
    "blockwise_diagonal",
    "identity",
];

fn design_params(kind: &CovKind) -> Vec<(&'static str, f64)> {
    match *kind {
        CovKind::Tridiagonal { rho } | CovKind::Autoregressive { rho } | CovKind::EqualCorrelation { rho } => {
            vec![("rho", rho)]
        }
        CovKind::TwoFactor { rho, rho1 } => vec![("rho", rho), ("rho1", rho1)],
        CovKind::BlockwiseDiagonal { h } => vec![("h", h)],
        CovKind::Identity => Vec::new(),
    }
}

fn design_kind_name(kind: &CovKind) -> &'static str {
    match kind {
        CovKind::Tridiagonal { .. } => "tridiagonal",
        CovKind::Autoregressive { .. } => "autoregressive",
        CovKind::EqualCorrelation { .. } => "equal_correlation",
        CovKind::TwoFactor { .. } => "two_factor",
        CovKind::BlockwiseDiagonal { .. } => "blockwise_diagonal",
        CovKind::Identity => "identity",
    }
}

impl ExperimentConfig {
    /// Parse and validate; all violations are reported together.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parameter(format!("config is not valid TOML: {e}")))?;
        let mut rd = Reader { errors: Vec::new() };
        rd.unknown(
            &root,
            &["design", "dims", "signal", "response", "methods", "reps", "seed", "retain", "facar", "holp", "fix_beta"],
            "",
        );

        let dims = rd.table(&root, "dims", "dims", true);
        let (mut n, mut p) = (None, None);
        if let Some(d) = dims {
            rd.unknown(d, &["n", "p"], "dims");
            let nv = rd.uint(d, "n", "dims.n");
            n = rd.require(nv, d, "n", "dims.n").map(|v| v as usize);
            let pv = rd.uint(d, "p", "dims.p");
            p = rd.require(pv, d, "p", "dims.p").map(|v| v as usize);
        }

        let mut design = None;
        if let Some(d) = rd.table(&root, "design", "design", true) {
            rd.unknown(d, &["kind", "params"], "design");
            let kind = rd.string(d, "kind", "design.kind");
            let kind = rd.require(kind, d, "kind", "design.kind");
            let empty = Table::new();
            let params = rd.table(d, "params", "design.params", false).unwrap_or(&empty);
            let get = |rd: &mut Reader, key: &str| {
                let path = format!("design.params.{key}");
                let v = rd.float(params, key, &path);
                rd.require(v, params, key, &path)
            };
            design = match kind {
                Some("tridiagonal") => {
                    rd.unknown(params, &["rho"], "design.params");
                    get(&mut rd, "rho").map(|rho| CovKind::Tridiagonal { rho })
                }
                Some("autoregressive") => {
                    rd.unknown(params, &["rho"], "design.params");
                    get(&mut rd, "rho").map(|rho| CovKind::Autoregressive { rho })
                }
                Some("equal_correlation") => {
                    rd.unknown(params, &["rho"], "design.params");
                    get(&mut rd, "rho").map(|rho| CovKind::EqualCorrelation { rho })
                }
                Some("two_factor") => {
                    rd.unknown(params, &["rho", "rho1"], "design.params");
                    let rho = get(&mut rd, "rho");
                    let rho1 = get(&mut rd, "rho1");
                    rho.zip(rho1).map(|(rho, rho1)| CovKind::TwoFactor { rho, rho1 })
                }
                Some("blockwise_diagonal") => {
                    rd.unknown(params, &["h"], "design.params");
                    get(&mut rd, "h").map(|h| CovKind::BlockwiseDiagonal { h })
                }
                Some("identity") => {
                    rd.unknown(params, &[], "design.params");
                    Some(CovKind::Identity)
                }
                Some(other) => {
                    rd.errors.push(format!(
                        "design.kind: unknown design kind {other:?} (expected one of {})",
                        DESIGN_KINDS.join(", ")
                    ));
                    None
                }
                None => None,
            };
        }
        if let (Some(kind), Some(p)) = (design, p) {
            if let Err(e) = CovSpec::new(kind, p).validate() {
                rd.errors.push(format!("design: {}", bare(e)));
            }
        }

        let mut response = ResponseModel::Linear { sigma: 1.0 };
        if let Some(r) = rd.table(&root, "response", "response", false) {
            rd.unknown(r, &["model", "sigma", "intercept"], "response");
            let sigma = rd.float(r, "sigma", "response.sigma");
            let intercept = rd.float(r, "intercept", "response.intercept");
            match rd.string(r, "model", "response.model").unwrap_or("linear") {
                "linear" => {
                    let sigma = sigma.unwrap_or(1.0);
                    if !(sigma >= 0.0) {
                        rd.errors.push(format!("response.sigma: {sigma} must be nonnegative"));
                    }
                    if intercept.is_some() {
                        rd.errors.push("response.intercept: only valid for the logistic model".into());
                    }
                    response = ResponseModel::Linear { sigma };
                }
                "logistic" => {
                    if sigma.is_some() {
                        rd.errors.push("response.sigma: not used by the logistic model".into());
                    }
                    response = ResponseModel::Logistic { intercept: intercept.unwrap_or(0.0) };
                }
                other => rd.errors.push(format!(
                    "response.model: unknown model {other:?} (expected linear or logistic)"
                )),
            }
        }

        let mut signal = None;
        if let Some(s) = rd.table(&root, "signal", "signal", true) {
            rd.unknown(s, &["mode", "params"], "signal");
            let mode = rd.string(s, "mode", "signal.mode");
            let mode = rd.require(mode, s, "mode", "signal.mode");
            let empty = Table::new();
            let params = rd.table(s, "params", "signal.params", false).unwrap_or(&empty);
            match mode {
                Some("fixed") => {
                    rd.unknown(params, &["s", "eta"], "signal.params");
                    let sv = rd.uint(params, "s", "signal.params.s");
                    let sv = rd.require(sv, params, "s", "signal.params.s");
                    let eta = rd.float(params, "eta", "signal.params.eta");
                    let eta = rd.require(eta, params, "eta", "signal.params.eta");
                    if let Some(eta) = eta {
                        if !(eta > 0.0) {
                            rd.errors.push(format!("signal.params.eta: {eta} must be positive"));
                        }
                    }
                    if let (Some(s), Some(p)) = (sv, p) {
                        if s == 0 || s as usize >= p {
                            rd.errors.push(format!("signal.params.s: {s} must lie in [1, p)"));
                        }
                    }
                    signal = sv.zip(eta).map(|(s, eta)| SignalSpec::Fixed { s: s as usize, eta });
                }
                Some("rw") => {
                    rd.unknown(params, &["theta", "r", "sign_scheme"], "signal.params");
                    let theta = rd.float(params, "theta", "signal.params.theta");
                    let theta = rd.require(theta, params, "theta", "signal.params.theta");
                    let r = rd.float(params, "r", "signal.params.r");
                    let r = rd.require(r, params, "r", "signal.params.r");
                    let scheme = match rd.string(params, "sign_scheme", "signal.params.sign_scheme") {
                        None | Some("symmetric") => SignScheme::Symmetric,
                        Some("positive") => SignScheme::Positive,
                        Some(other) => {
                            rd.errors.push(format!(
                                "signal.params.sign_scheme: unknown scheme {other:?} (expected symmetric or positive)"
                            ));
                            SignScheme::Symmetric
                        }
                    };
                    if let (Some(theta), Some(r)) = (theta, r) {
                        let spec = RareWeakSpec { theta, r, sigma: 1.0, sign_scheme: scheme };
                        if let Err(e) = spec.validate() {
                            rd.errors.push(format!("signal.params: {}", bare(e)));
                        }
                        signal = Some(SignalSpec::RareWeak { theta, r, sign_scheme: scheme });
                    }
                }
                Some(other) => rd.errors.push(format!(
                    "signal.mode: unknown mode {other:?} (expected fixed or rw)"
                )),
                None => {}
            }
        }

        let mut methods = Vec::new();
        match root.get("methods") {
            Some(Value::Array(items)) if !items.is_empty() => {
                for (i, item) in items.iter().enumerate() {
                    match item.as_str().map(str::parse::<Method>) {
                        Some(Ok(m)) if methods.contains(&m) => {
                            rd.errors.push(format!("methods[{i}]: duplicate method {m}"))
                        }
                        Some(Ok(m)) => methods.push(m),
                        _ => rd.errors.push(format!(
                            "methods[{i}]: unknown method {item} (expected one of {})",
                            Method::ALL.map(|m| m.name()).join(", ")
                        )),
                    }
                }
            }
            Some(_) => rd.errors.push("methods: expected a nonempty list of method names".into()),
            None => rd.errors.push("methods: missing".into()),
        }
        let logistic = matches!(response, ResponseModel::Logistic { .. });
        for m in &methods {
            if m.is_glm() && !logistic {
                rd.errors.push(format!("methods: {m} needs response.model = \"logistic\""));
            }
            if *m == Method::Lsr && !matches!(design, Some(CovKind::BlockwiseDiagonal { .. }) | None) {
                rd.errors.push("methods: lsr needs the blockwise_diagonal design".into());
            }
        }

        let reps = rd.uint(&root, "reps", "reps");
        let reps = rd.require(reps, &root, "reps", "reps").unwrap_or(0) as usize;
        if root.contains_key("reps") && reps == 0 {
            rd.errors.push("reps: must be at least 1".into());
        }
        let seed = rd.uint(&root, "seed", "seed");
        let seed = rd.require(seed, &root, "seed", "seed").unwrap_or(0);
        let retain = rd
            .uint(&root, "retain", "retain")
            .map(|v| v as usize)
            .or(n.zip(p).map(|(n, p)| n.min(p)));
        if let (Some(retain), Some(p)) = (retain, p) {
            if retain == 0 || retain > p {
                rd.errors.push(format!("retain: {retain} must lie in [1, p]"));
            }
        }
        let fix_beta = rd.boolean(&root, "fix_beta", "fix_beta").unwrap_or(false);

        let mut facar = FacarParams::default();
        let mut k_rule_text = "ideal".to_string();
        if let Some(f) = rd.table(&root, "facar", "facar", false) {
            rd.unknown(f, &["delta", "m", "k_rule", "drop_degenerate"], "facar");
            if let Some(delta) = rd.float(f, "delta", "facar.delta") {
                if !(delta > 0.0 && delta < 1.0) {
                    rd.errors.push(format!("facar.delta: {delta} must lie in (0, 1)"));
                }
                facar.delta = delta;
            }
            if let Some(m) = rd.uint(f, "m", "facar.m") {
                if m == 0 {
                    rd.errors.push("facar.m: must be at least 1".into());
                }
                facar.m = m as usize;
            }
            if let Some(rule) = rd.string(f, "k_rule", "facar.k_rule") {
                k_rule_text = rule.to_string();
            }
            if let Some(b) = rd.boolean(f, "drop_degenerate", "facar.drop_degenerate") {
                facar.drop_degenerate = b;
            }
        }
        if k_rule_text == "ideal" {
            if let (Some(kind), Some(p)) = (design, p) {
                facar.k_rule = KRule::Fixed(CovSpec::new(kind, p).ideal_k());
            }
        } else {
            match k_rule_text.parse::<KRule>() {
                Ok(rule) => facar.k_rule = rule,
                Err(e) => rd.errors.push(format!("facar.k_rule: {}", bare(e))),
            }
        }
        if let (KRule::Fixed(k), Some(n), Some(p)) = (facar.k_rule, n, p) {
            if k > 0 && k >= n.min(p) {
                rd.errors.push(format!("facar.k_rule: K = {k} must be below min(n, p)"));
            }
        }

        let mut holp_ridge = 0.0;
        if let Some(h) = rd.table(&root, "holp", "holp", false) {
            rd.unknown(h, &["ridge"], "holp");
            if let Some(r) = rd.float(h, "ridge", "holp.ridge") {
                if !(r >= 0.0) {
                    rd.errors.push(format!("holp.ridge: {r} must be nonnegative"));
                }
                holp_ridge = r;
            }
        }

        if let (Some(n), Some(_)) = (n, p) {
            if n < 2 {
                rd.errors.push("dims.n: need at least 2 observations".into());
            }
        }

        if !rd.errors.is_empty() {
            let mut msg = format!("{} config error(s):", rd.errors.len());
            for e in &rd.errors {
                msg.push_str("\n  - ");
                msg.push_str(e);
            }
            return Err(Error::Parameter(msg));
        }
        Ok(Self {
            design: design.expect("validated"),
            n: n.expect("validated"),
            p: p.expect("validated"),
            signal: signal.expect("validated"),
            response,
            methods,
            reps,
            seed,
            retain: retain.expect("validated"),
            facar,
            holp_ridge,
            fix_beta,
        })
    }

    /// Canonical TOML with every default filled in; parses back to `self`.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("reps".into(), Value::Integer(self.reps as i64));
        root.insert("seed".into(), Value::Integer(self.seed as i64));
        root.insert("retain".into(), Value::Integer(self.retain as i64));
        root.insert("fix_beta".into(), Value::Boolean(self.fix_beta));
        root.insert(
            "methods".into(),
            Value::Array(self.methods.iter().map(|m| Value::String(m.name().into())).collect()),
        );

        let mut design = Table::new();
        design.insert("kind".into(), Value::String(design_kind_name(&self.design).into()));
        let mut dp = Table::new();
        for (k, v) in design_params(&self.design) {
            dp.insert(k.into(), Value::Float(v));
        }
        design.insert("params".into(), Value::Table(dp));
        root.insert("design".into(), Value::Table(design));

        let mut dims = Table::new();
        dims.insert("n".into(), Value::Integer(self.n as i64));
        dims.insert("p".into(), Value::Integer(self.p as i64));
        root.insert("dims".into(), Value::Table(dims));

        let mut signal = Table::new();
        let mut sp = Table::new();
        match self.signal {
            SignalSpec::Fixed { s, eta } => {
                signal.insert("mode".into(), Value::String("fixed".into()));
                sp.insert("s".into(), Value::Integer(s as i64));
                sp.insert("eta".into(), Value::Float(eta));
            }
            SignalSpec::RareWeak { theta, r, sign_scheme } => {
                signal.insert("mode".into(), Value::String("rw".into()));
                sp.insert("theta".into(), Value::Float(theta));
                sp.insert("r".into(), Value::Float(r));
                let scheme = match sign_scheme {
                    SignScheme::Symmetric => "symmetric",
                    SignScheme::Positive => "positive",
                };
                sp.insert("sign_scheme".into(), Value::String(scheme.into()));
            }
        }
        signal.insert("params".into(), Value::Table(sp));
        root.insert("signal".into(), Value::Table(signal));

        let mut response = Table::new();
        match self.response {
            ResponseModel::Linear { sigma } => {
                response.insert("model".into(), Value::String("linear".into()));
                response.insert("sigma".into(), Value::Float(sigma));
            }
            ResponseModel::Logistic { intercept } => {
                response.insert("model".into(), Value::String("logistic".into()));
                response.insert("intercept".into(), Value::Float(intercept));
            }
        }
        root.insert("response".into(), Value::Table(response));

        let mut facar = Table::new();
        facar.insert("delta".into(), Value::Float(self.facar.delta));
        facar.insert("m".into(), Value::Integer(self.facar.m as i64));
        facar.insert("k_rule".into(), Value::String(self.facar.k_rule.to_string()));
        facar.insert("drop_degenerate".into(), Value::Boolean(self.facar.drop_degenerate));
        root.insert("facar".into(), Value::Table(facar));

        let mut holp = Table::new();
        holp.insert("ridge".into(), Value::Float(self.holp_ridge));
        root.insert("holp".into(), Value::Table(holp));

        toml::to_string(&root).expect("plain tables always serialize")
    }

    pub fn cov_spec(&self) -> CovSpec {
        CovSpec::new(self.design, self.p)
    }
}

fn bare(e: Error) -> String {
    match e {
        Error::Parameter(m) => m,
        other => other.to_string(),
    }
}

/// Outcome of one method on one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub rep: usize,
    pub method: Method,
    pub outcome: std::result::Result<RepMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepMetrics {
    pub screening: ScreeningMetrics,
    pub signals: usize,
    pub auc: f64,
    /// TPR on the fixed FPR grid.
    pub roc: Vec<f64>,
}

/// Aggregates for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: Method,
    pub roc: Vec<(f64, f64)>,
    pub sp: f64,
    pub type2_mean: f64,
    pub size_median: f64,
    pub size_mean: f64,
    pub reps_ok: usize,
    pub reps_failed: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub reports: Vec<EvalReport>,
    /// Sorted by (rep, method order in the config).
    pub records: Vec<RepRecord>,
}

impl ExperimentResult {
    pub fn report(&self, method: Method) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method)
    }

    pub fn failures(&self) -> usize {
        self.reports.iter().map(|r| r.reps_failed).sum()
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,method\n");
        for r in &self.reports {
            for (f, t) in &r.roc {
                let _ = writeln!(out, "{},{},{}", shortest(*f), shortest(*t), r.method);
            }
        }
        out
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("method,sp,type2_mean,size_median,size_mean,reps_ok,reps_failed\n");
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method,
                shortest(r.sp),
                shortest(r.type2_mean),
                shortest(r.size_median),
                shortest(r.size_mean),
                r.reps_ok,
                r.reps_failed
            );
        }
        out
    }

    pub fn per_rep_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["rep", "method", "signals", "sp", "type2", "size", "auc", "status"]);
        for rec in &self.records {
            let row = match &rec.outcome {
                Ok(m) => [
                    rec.rep.to_string(),
                    rec.method.to_string(),
                    m.signals.to_string(),
                    (m.screening.sure as u8).to_string(),
                    m.screening.type2.to_string(),
                    m.screening.ss_size.to_string(),
                    shortest(m.auc),
                    "ok".into(),
                ],
                Err(e) => [
                    rec.rep.to_string(),
                    rec.method.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("error: {e}"),
                ],
            };
            let _ = w.write_record(&row);
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 fields")
    }
}

/// One repetition's data set.
pub struct RepData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta: DVector<f64>,
}

/// Stateful generator: the covariance factor is computed once per experiment.
pub struct Simulator {
    config: ExperimentConfig,
    sampler: GaussianSampler,
    fixed_beta: Option<DVector<f64>>,
}

impl Simulator {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let sigma = materialize_cov(&config.cov_spec())?;
        let sampler = GaussianSampler::new(&sigma)?;
        let mut sim = Self { config, sampler, fixed_beta: None };
        if sim.config.fix_beta {
            sim.fixed_beta = Some(sim.draw_beta(0)?);
        }
        Ok(sim)
    }

    fn draw_beta(&self, rep: usize) -> Result<DVector<f64>> {
        let c = &self.config;
        let mut rng = rep_stream(c.seed, rep as u64, Purpose::Coefficients);
        match c.signal {
            SignalSpec::Fixed { s, eta } => sample_beta_fixed_with(s, eta, c.p, &mut rng),
            SignalSpec::RareWeak { theta, r, sign_scheme } => {
                let sigma = match c.response {
                    ResponseModel::Linear { sigma } if sigma > 0.0 => sigma,
                    _ => 1.0,
                };
                let spec = RareWeakSpec { theta, r, sigma, sign_scheme };
                sample_beta_rw_with(&spec, c.p, c.n, &mut rng)
            }
        }
    }

    pub fn generate(&self, rep: usize) -> Result<RepData> {
        let c = &self.config;
        let x = self.sampler.sample(c.n, &mut rep_stream(c.seed, rep as u64, Purpose::Design));
        let beta = match &self.fixed_beta {
            Some(b) => b.clone(),
            None => self.draw_beta(rep)?,
        };
        let mut noise = rep_stream(c.seed, rep as u64, Purpose::Noise);
        let y = match c.response {
            ResponseModel::Linear { sigma } => gen_response_linear_with(&x, &beta, sigma, &mut noise)?,
            ResponseModel::Logistic { intercept } => gen_response_logistic_with(&x, &beta, intercept, &mut noise)?,
        };
        Ok(RepData { x, y, beta })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }
}

/// Score every requested method on one data set; the factor adjustment is
/// shared between FA-CAR and FA-MR.
pub fn run_methods(
    config: &ExperimentConfig,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Vec<(Method, Result<RankingResult>)> {
    let mut fa_cache = None;
    let mut out = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let result = match method {
            Method::FaCar => rank_facar(x, y, &config.facar).map(|(r, fa)| {
                fa_cache = Some(fa);
                r
            }),
            Method::FaMr => {
                if fa_cache.is_none() {
                    match adjust_auto(x, y, config.facar.k_rule) {
                        Ok(fa) => fa_cache = Some(fa),
                        Err(e) => {
                            out.push((method, Err(e)));
                            continue;
                        }
                    }
                }
                score_famr(fa_cache.as_ref().expect("filled above"))
            }
            Method::Mr => score_mr(x, y),
            Method::Holp => score_holp(x, y, config.holp_ridge),
            Method::Rrcs => score_rrcs(x, y),
            Method::Lsr => match config.design {
                CovKind::BlockwiseDiagonal { h } => score_lsr_block(x, y, h),
                _ => param("lsr needs the blockwise_diagonal design"),
            },
            Method::GlmFaCar => score_facar_glm(y, x, &config.facar, Family::Logistic),
            Method::GlmMr1 => score_mr_glm(y, x, Family::Logistic, MarginalVariant::MleCoef),
            Method::GlmMr2 => score_mr_glm(y, x, Family::Logistic, MarginalVariant::MaxLoglik),
        };
        out.push((method, result));
    }
    out
}

fn evaluate(result: &RankingResult, support: &[usize], retain: usize) -> Result<RepMetrics> {
    let screening = screening_metrics(&result.scores, support, retain)?;
    let curve = roc_curve(&result.scores, support)?;
    Ok(RepMetrics {
        screening,
        signals: support.len(),
        auc: auc(&curve),
        roc: resample_roc(&curve),
    })
}

/// Run all repetitions. Each rep draws from its own counter-based streams,
/// so output is independent of scheduling and thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let sim = Simulator::new(config.clone())?;
    let per_rep = crate::par::map(config.reps, |rep| -> Vec<RepRecord> {
        let data = sim.generate(rep);
        config
            .methods
            .iter()
            .copied()
            .zip(match &data {
                Ok(d) => {
                    let support = support_of(&d.beta);
                    run_methods(config, &d.x, &d.y)
                        .into_iter()
                        .map(|(_, r)| {
                            r.and_then(|r| evaluate(&r, &support, config.retain))
                                .map_err(|e| e.to_string())
                        })
                        .collect::<Vec<_>>()
                }
                Err(e) => vec![Err(e.to_string()); config.methods.len()],
            })
            .map(|(method, outcome)| RepRecord { rep, method, outcome })
            .collect()
    });
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();
    for rec in &records {
        if let Err(e) = &rec.outcome {
            log::warn!("rep {} {}: {e}", rec.rep, rec.method);
        }
    }

    let reports = config
        .methods
        .iter()
        .map(|&method| {
            let ok: Vec<&RepMetrics> = records
                .iter()
                .filter(|r| r.method == method)
                .filter_map(|r| r.outcome.as_ref().ok())
                .collect();
            let failed = config.reps - ok.len();
            let k = ok.len() as f64;
            let sizes: Vec<f64> = ok.iter().map(|m| m.screening.ss_size as f64).collect();
            let roc = if ok.is_empty() {
                Vec::new()
            } else {
                average_sampled(&ok.iter().map(|m| m.roc.clone()).collect::<Vec<_>>())
            };
            EvalReport {
                method,
                roc,
                sp: ok.iter().filter(|m| m.screening.sure).count() as f64 / k,
                type2_mean: ok.iter().map(|m| m.screening.type2 as f64).sum::<f64>() / k,
                size_median: median(&sizes),
                size_mean: sizes.iter().sum::<f64>() / k,
                reps_ok: ok.len(),
                reps_failed: failed,
            }
        })
        .collect();
    Ok(ExperimentResult { config: config.clone(), reports, records })
}

/// Built-in settings.
pub const PRESETS: [(&str, &str); 5] = [
    ("tridiag_200_1000_3_5", include_str!("../presets/tridiag_200_1000_3_5.toml")),
    ("two_factor_200_1000_3_5", include_str!("../presets/two_factor_200_1000_3_5.toml")),
    ("logistic_tridiag_200_1000_3_5", include_str!("../presets/logistic_tridiag_200_1000_3_5.toml")),
    ("roc_autoreg_200_1000_3_20", include_str!("../presets/roc_autoreg_200_1000_3_20.toml")),
    ("blockwise_rw", include_str!("../presets/blockwise_rw.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
