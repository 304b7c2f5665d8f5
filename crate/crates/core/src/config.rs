//! Experiment configuration: strict TOML parsing, defaults and range checks.

use crate::flow;
use crate::kernel::DEFAULT_STEP_CAP;
use crate::ldp;
use crate::protocols::{PayoffGame, ProtocolKind, RateEntry, RevisionProtocol, DEFAULT_SCALE};
use crate::qsd;
use crate::recurrence;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub from: usize,
    pub to: usize,
    pub rate: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d: Option<usize>,
    pub protocol: Option<String>,
    pub payoff: Option<Vec<Vec<f64>>>,
    pub scale: Option<f64>,
    pub lower_margin: Option<f64>,
    pub upper_margin: Option<f64>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub rates: Option<Vec<RateSpec>>,
    /// Point around which QSD concentration is measured.
    pub target: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "N")]
    pub n: Option<u32>,
    #[serde(rename = "N_list")]
    pub n_list: Option<Vec<u32>>,
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QsdSection {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Radius of the neighborhood of `model.target` used for mass reports.
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub h: Option<f64>,
    #[serde(rename = "transient_T")]
    pub transient_t: Option<f64>,
    #[serde(rename = "window_T")]
    pub window_t: Option<f64>,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n_samples: Option<usize>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub step_cap: Option<u64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpSection {
    #[serde(rename = "M")]
    pub m: Option<u32>,
    pub tau_bounds: Option<[f64; 2]>,
    pub eps_class: Option<f64>,
    pub alpha_margin: Option<f64>,
    /// Also compute classes at `2M` and flag a change in the class count.
    pub refine: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrenceSection {
    /// Pseudo-orbit jump size, in cell widths of `Delta_M`.
    pub delta: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    #[serde(rename = "T_max")]
    pub t_max: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<String>,
    pub formats: Option<Vec<String>>,
}

/// The file as written; every field optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub qsd: QsdSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub ldp: LdpSection,
    #[serde(default)]
    pub recurrence: RecurrenceSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.0.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

pub const FORMATS: [&str; 3] = ["csv", "json", "svg"];
pub const PROTOCOLS: [&str; 5] = [
    "pairwise_proportional",
    "aspiration_uniform",
    "aspiration_scaled",
    "dissatisfaction",
    "custom",
];

/// Line (1-based) of `key = ...` inside `[section]`, if present.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') && !line.starts_with("[[") {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                header = Some(k + 1);
            }
            continue;
        }
        if line.starts_with("[[") {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim();
            if let Some(rest) = name.strip_prefix(section) {
                if rest.trim_start_matches('.') == key {
                    return Some(k + 1);
                }
            }
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = line.split_once('=') {
                if lhs.trim() == key {
                    return Some(k + 1);
                }
            }
        }
    }
    header
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub protocol: RevisionProtocol,
}

struct Checker<'a> {
    text: &'a str,
    issues: Vec<ConfigIssue>,
}

impl Checker<'_> {
    fn fail(&mut self, section: &str, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            line: locate(self.text, section, key),
            field: format!("{section}.{key}"),
            message: message.into(),
        });
    }

    fn positive(&mut self, section: &str, key: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.fail(section, key, format!("must be positive, got {v}"));
        }
    }

    fn simplex_point(&mut self, section: &str, key: &str, x: &[f64], d: usize) {
        let s: f64 = x.iter().sum();
        if x.len() != d || x.iter().any(|v| *v < 0.0) || (s - 1.0).abs() > 1e-9 {
            self.fail(section, key, format!("must be a point of the {d}-strategy simplex, got {x:?}"));
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigErrors> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            ConfigErrors(vec![ConfigIssue {
                line,
                field: "config".into(),
                message: e.message().trim().to_string(),
            }])
        })?;
        Self::from_raw(raw, text)
    }

    /// Fills defaults and checks ranges; `text` is used to anchor messages.
    pub fn from_raw(mut raw: RawConfig, text: &str) -> Result<Self, ConfigErrors> {
        let mut c = Checker {
            text,
            issues: Vec::new(),
        };
        let m = &mut raw.model;
        let kind_name = m.protocol.clone().unwrap_or_else(|| "aspiration_uniform".into());
        m.protocol = Some(kind_name.clone());
        if !PROTOCOLS.contains(&kind_name.as_str()) {
            c.fail("model", "protocol", format!("unknown protocol `{kind_name}`; expected one of {PROTOCOLS:?}"));
        }
        let needs_game = kind_name != "custom";
        if needs_game && m.payoff.is_none() {
            c.fail("model", "payoff", format!("protocol `{kind_name}` requires a payoff matrix"));
        }
        if !needs_game && m.rates.is_none() {
            c.fail("model", "rates", "custom protocol requires a rate table");
        }
        let inferred = if needs_game {
            m.payoff.as_ref().map(Vec::len)
        } else {
            m.d
        };
        let d = m.d.or(inferred).unwrap_or(0);
        if d < 2 {
            c.fail("model", "d", "strategy count must be at least 2");
        }
        if let (Some(given), Some(p)) = (m.d, m.payoff.as_ref()) {
            if needs_game && given != p.len() {
                c.fail("model", "payoff", format!("has {} rows but d = {given}", p.len()));
            }
        }
        m.d = Some(d);
        let scale = *m.scale.get_or_insert(DEFAULT_SCALE);
        if !(scale > 0.0 && scale <= 1.0) {
            c.fail("model", "scale", format!("must lie in (0, 1], got {scale}"));
        }
        match kind_name.as_str() {
            "aspiration_uniform" => {
                m.lower_margin.get_or_insert(1.0);
                m.upper_margin.get_or_insert(1.0);
            }
            "aspiration_scaled" => {
                if m.alpha.is_none() {
                    c.fail("model", "alpha", "aspiration_scaled requires alpha");
                }
                if m.beta.is_none() {
                    c.fail("model", "beta", "aspiration_scaled requires beta");
                }
            }
            "dissatisfaction" => {
                if m.lower.is_none() {
                    c.fail("model", "lower", "dissatisfaction requires a lower bound");
                }
                if m.upper.is_none() {
                    c.fail("model", "upper", "dissatisfaction requires an upper bound");
                }
            }
            _ => {}
        }
        let target = m.target.clone();
        if let Some(t) = &target {
            if d >= 2 {
                c.simplex_point("model", "target", t, d);
            }
        }

        let g = &mut raw.grid;
        if g.n.is_none() && g.n_list.is_none() {
            g.n = Some(20);
        }
        if let Some(n) = g.n {
            if n < 2 {
                c.fail("grid", "N", format!("must be at least 2, got {n}"));
            }
        }
        if let Some(list) = &g.n_list {
            if list.is_empty() {
                c.fail("grid", "N_list", "must not be empty");
            }
            if list.iter().any(|&n| n < 2) {
                c.fail("grid", "N_list", "every N must be at least 2");
            }
        }
        if g.n.is_none() {
            g.n = g.n_list.as_ref().and_then(|l| l.first().copied());
        }
        if g.n_list.is_none() {
            g.n_list = g.n.map(|n| vec![n]);
        }
        let cap = *g.cap.get_or_insert(crate::simplex::DEFAULT_STATE_CAP);
        if cap == 0 {
            c.fail("grid", "cap", "must be positive");
        }

        let q = &mut raw.qsd;
        let tol = *q.tol.get_or_insert(qsd::DEFAULT_TOL);
        c.positive("qsd", "tol", tol);
        if *q.max_iter.get_or_insert(qsd::DEFAULT_MAX_ITER) == 0 {
            c.fail("qsd", "max_iter", "must be at least 1");
        }
        let eps = *q.eps.get_or_insert(0.1);
        c.positive("qsd", "eps", eps);

        let f = &mut raw.flow;
        let ft = *f.t.get_or_insert(50.0);
        c.positive("flow", "T", ft);
        let fh = *f.h.get_or_insert(0.1);
        c.positive("flow", "h", fh);
        let tr = *f.transient_t.get_or_insert(flow::DEFAULT_TRANSIENT_T);
        c.positive("flow", "transient_T", tr);
        let win = *f.window_t.get_or_insert(flow::DEFAULT_WINDOW_T);
        c.positive("flow", "window_T", win);
        if let Some(x0) = f.x0.clone() {
            if d >= 2 {
                c.simplex_point("flow", "x0", &x0, d);
            }
        }

        let s = &mut raw.sim;
        if *s.n_samples.get_or_insert(10_000) == 0 {
            c.fail("sim", "n_samples", "must be at least 1");
        }
        if *s.n_paths.get_or_insert(1000) == 0 {
            c.fail("sim", "n_paths", "must be at least 1");
        }
        s.seed.get_or_insert(1);
        if *s.step_cap.get_or_insert(DEFAULT_STEP_CAP) == 0 {
            c.fail("sim", "step_cap", "must be at least 1");
        }
        let st = *s.t.get_or_insert(5.0);
        c.positive("sim", "T", st);
        if let Some(x0) = s.x0.clone() {
            if d >= 2 {
                c.simplex_point("sim", "x0", &x0, d);
            }
        }
        let eps_list = s.eps.get_or_insert_with(|| vec![0.1]).clone();
        if eps_list.iter().any(|e| !(*e > 0.0)) {
            c.fail("sim", "eps", "every threshold must be positive");
        }

        let l = &mut raw.ldp;
        let mm = *l.m.get_or_insert(ldp::default_m(d.max(2)));
        if mm < 10 {
            c.fail("ldp", "M", format!("must be at least 10, got {mm}"));
        }
        let tb = *l.tau_bounds.get_or_insert([ldp::DEFAULT_TAU_BOUNDS.0, ldp::DEFAULT_TAU_BOUNDS.1]);
        if !(tb[0] > 0.0 && tb[0] < tb[1]) {
            c.fail("ldp", "tau_bounds", format!("need 0 < min < max, got {tb:?}"));
        }
        if let Some(e) = l.eps_class {
            c.positive("ldp", "eps_class", e);
        }
        let margin = *l.alpha_margin.get_or_insert(1.0 / (2.0 * mm.max(1) as f64));
        if !(0.0..0.5).contains(&margin) {
            c.fail("ldp", "alpha_margin", format!("must lie in [0, 0.5), got {margin}"));
        }
        l.refine.get_or_insert(false);

        let r = &mut raw.recurrence;
        let delta = *r.delta.get_or_insert(recurrence::DEFAULT_DELTA_CELLS);
        if !(delta >= 1.0) {
            c.fail("recurrence", "delta", format!("must be at least one cell width, got {delta}"));
        }
        let rt = *r.t.get_or_insert(recurrence::DEFAULT_T);
        let rtm = *r.t_max.get_or_insert(recurrence::DEFAULT_T_MAX);
        if !(rt > 0.0 && rt < rtm) {
            c.fail("recurrence", "T", format!("need 0 < T < T_max, got T = {rt}, T_max = {rtm}"));
        }
        let eta = *r.eta.get_or_insert(0.1);
        c.positive("recurrence", "eta", eta);

        let o = &mut raw.output;
        o.directory.get_or_insert_with(|| "qsdlab-out".into());
        let formats = o.formats.get_or_insert_with(|| FORMATS.iter().map(|s| s.to_string()).collect());
        for fmt_name in formats.iter() {
            if !FORMATS.contains(&fmt_name.as_str()) {
                let msg = format!("unknown format `{fmt_name}`; expected a subset of {FORMATS:?}");
                c.fail("output", "formats", msg);
            }
        }

        if !c.issues.is_empty() {
            return Err(ConfigErrors(c.issues));
        }
        let protocol = match build_protocol(&raw.model) {
            Ok(p) => p,
            Err(e) => {
                c.fail("model", "protocol", e);
                return Err(ConfigErrors(c.issues));
            }
        };
        Ok(Self { raw, protocol })
    }

    /// Canonical TOML form with all defaults applied.
    pub fn normalized(&self) -> String {
        toml::to_string(&self.raw).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.normalized().as_bytes()))
    }

    pub fn d(&self) -> usize {
        self.raw.model.d.expect("filled")
    }

    pub fn n(&self) -> u32 {
        self.raw.grid.n.expect("filled")
    }

    pub fn n_list(&self) -> Vec<u32> {
        self.raw.grid.n_list.clone().expect("filled")
    }

    /// Concentration target; the barycenter when not given.
    pub fn target(&self) -> Vec<f64> {
        self.raw
            .model
            .target
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.d() as f64; self.d()])
    }

    pub fn seed(&self) -> u64 {
        self.raw.sim.seed.expect("filled")
    }

    pub fn wants(&self, format: &str) -> bool {
        self.raw.output.formats.as_ref().is_some_and(|f| f.iter().any(|x| x == format))
    }

    /// Applies command-line overrides and re-validates.
    pub fn with_overrides(&self, n: Option<u32>, seed: Option<u64>, out: Option<&str>) -> Result<Self, ConfigErrors> {
        let mut raw = self.raw.clone();
        if let Some(n) = n {
            raw.grid.n = Some(n);
            raw.grid.n_list = Some(vec![n]);
        }
        if let Some(s) = seed {
            raw.sim.seed = Some(s);
        }
        if let Some(o) = out {
            raw.output.directory = Some(o.to_string());
        }
        Self::from_raw(raw, "")
    }
}

fn build_protocol(m: &ModelSection) -> Result<RevisionProtocol, String> {
    let scale = m.scale.expect("filled");
    let game = || -> Result<PayoffGame, String> {
        PayoffGame::new(m.payoff.as_ref().expect("checked")).map_err(|e| e.to_string())
    };
    let kind = match m.protocol.as_deref().expect("filled") {
        "pairwise_proportional" => ProtocolKind::PairwiseProportional { game: game()? },
        "aspiration_uniform" => ProtocolKind::AspirationUniform {
            game: game()?,
            lower_margin: m.lower_margin.expect("filled"),
            upper_margin: m.upper_margin.expect("filled"),
        },
        "aspiration_scaled" => ProtocolKind::AspirationScaled {
            game: game()?,
            alpha: m.alpha.clone().expect("checked"),
            beta: m.beta.clone().expect("checked"),
        },
        "dissatisfaction" => ProtocolKind::Dissatisfaction {
            game: game()?,
            lower: m.lower.expect("checked"),
            upper: m.upper.expect("checked"),
        },
        _ => {
            let mut entries = Vec::new();
            for r in m.rates.as_ref().expect("checked") {
                if r.from == 0 || r.to == 0 {
                    return Err("custom rate indices are 1-based".into());
                }
                entries.push(RateEntry {
                    from: r.from - 1,
                    to: r.to - 1,
                    rate: crate::protocols::Polynomial::parse(&r.rate).map_err(|e| e.to_string())?,
                });
            }
            ProtocolKind::CustomTable {
                d: m.d.expect("filled"),
                entries,
            }
        }
    };
    RevisionProtocol::new(kind, scale).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HD: &str = "[model]\nprotocol = \"aspiration_uniform\"\npayoff = [[-1.0, 2.0], [0.0, 1.0]]\n\n[grid]\nN = 20\n";

    #[test]
    fn defaults_and_idempotence() {
        let c = ExperimentConfig::from_toml(HD).unwrap();
        assert_eq!(c.d(), 2);
        assert_eq!(c.n_list(), vec![20]);
        let echo = c.normalized();
        let again = ExperimentConfig::from_toml(&echo).unwrap();
        assert_eq!(again.normalized(), echo);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn missing_payoff_is_named() {
        let e = ExperimentConfig::from_toml("[model]\nprotocol = \"pairwise_proportional\"\n").unwrap_err();
        assert!(e.0.iter().any(|i| i.field == "model.payoff"), "{e}");
    }

    #[test]
    fn range_errors_are_line_anchored() {
        let text = HD.replace("N = 20", "N = 1");
        let e = ExperimentConfig::from_toml(&text).unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert_eq!(e.0[0].field, "grid.N");
        assert_eq!(e.0[0].line, Some(6));
        let text = format!("{HD}\n[qsd]\ntol = -1.0\n\n[ldp]\nM = 3\n");
        let e = ExperimentConfig::from_toml(&text).unwrap_err();
        assert_eq!(e.0.len(), 2, "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = HD.replace("N = 20", "N = 20\nsize = 3");
        let e = ExperimentConfig::from_toml(&text).unwrap_err();
        assert_eq!(e.0[0].line, Some(7));
        assert!(e.0[0].message.contains("size"));
    }
}
