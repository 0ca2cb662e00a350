//! Scenario configuration, read from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::field::{FieldRef, PrimeField};
use crate::keynet::{ChannelConfig, Topology};
use crate::renewal::{GroupRef, RenewalGroup};
use crate::spss::{Password, SpssParams};
use crate::tpv::TpvConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseKind {
    Register,
    Reconstruct,
    Verify,
    Refute,
    Renew,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::Register => "register",
            PhaseKind::Reconstruct => "reconstruct",
            PhaseKind::Verify => "verify",
            PhaseKind::Refute => "refute",
            PhaseKind::Renew => "renew",
        }
    }
}

/// Node placement of every role.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Placement {
    pub owner: String,
    pub holders: Vec<String>,
    pub verifier: String,
    pub calculator: String,
    pub end_user: String,
}

impl Default for Placement {
    fn default() -> Self {
        Placement {
            owner: "Ohtemachi-1".into(),
            holders: (1..=4).map(|i| format!("Koganei-{i}")).collect(),
            verifier: "Koganei-1".into(),
            calculator: "Koganei-2".into(),
            end_user: "Koganei-3".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub size_bytes: usize,
    /// Literal content; when absent the data is drawn from the master seed.
    pub content: Option<String>,
    pub password: String,
    /// Password presented at reconstruction; defaults to `password`.
    pub attempt: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            size_bytes: 1024,
            content: None,
            password: "correct horse".into(),
            attempt: None,
        }
    }
}

/// Simulated-time model. Protocol semantics never read the wall clock.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    pub latency_us_per_km: f64,
    pub processing_us: u64,
    pub processing_us_per_kb: u64,
    /// Key accumulates for this long before the first phase.
    pub warmup_us: u64,
    /// How long a role waits for replies it is collecting.
    pub timeout_us: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            latency_us_per_km: 5.0,
            processing_us: 50,
            processing_us_per_kb: 10,
            warmup_us: 10_000_000,
            timeout_us: 86_400_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitFlip {
    /// Role names, e.g. `calculator` and `holder2`.
    pub from: String,
    pub to: String,
    /// Which message on that directed pair to corrupt, counting from 1.
    #[serde(default = "one")]
    pub nth: u64,
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Attacks {
    /// The owner flips one byte of the data before forwarding it.
    pub tamper_owner: bool,
    /// The end user claims to have received different data.
    pub false_claim_user: bool,
    /// This holder answers with garbage and sends a bad renewal share.
    pub corrupt_holder: Option<u64>,
    /// These holders are offline after registration.
    pub drop_holders: Vec<u64>,
    pub bit_flip_channel: Option<BitFlip>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub sizes_bytes: Vec<usize>,
    pub repetitions: usize,
    /// Also time the field-bound phases under a Mersenne prime and a
    /// general prime of the same size.
    pub compare_fields: bool,
    pub mersenne_field: String,
    pub general_field: String,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes_bytes: vec![1024, 10 * 1024, 100 * 1024],
            repetitions: 5,
            compare_fields: true,
            mersenne_field: "mersenne:127".into(),
            general_field: "2^127-25".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub transcript: Option<PathBuf>,
    /// Persist role stores under this directory instead of memory.
    pub store_dir: Option<PathBuf>,
    pub bench_csv: Option<PathBuf>,
    pub bench_dat: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub threshold: usize,
    pub holders: usize,
    /// `group` takes the renewal group's subgroup order; otherwise any
    /// form accepted by the field parser.
    pub field: String,
    /// `rfc5114-2048-256`, `toy`, `generate:<bits>` or `none`.
    pub group: String,
    pub tpv: TpvConfig,
    pub channel: ChannelConfig,
    pub topology: Topology,
    pub placement: Placement,
    /// Clock offset per role name, in microseconds.
    pub clock_skew_us: BTreeMap<String, i64>,
    pub data: DataConfig,
    pub phases: Vec<PhaseKind>,
    /// Holders used for interpolation; the lowest live ones by default.
    pub subset: Option<Vec<u64>>,
    pub timing: Timing,
    pub attacks: Attacks,
    pub bench: BenchConfig,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        use PhaseKind::*;
        ScenarioConfig {
            seed: 1,
            threshold: 3,
            holders: 4,
            field: "group".into(),
            group: "rfc5114-2048-256".into(),
            tpv: TpvConfig::default(),
            channel: ChannelConfig::default(),
            topology: Topology::tokyo(),
            placement: Placement::default(),
            clock_skew_us: BTreeMap::new(),
            data: DataConfig::default(),
            phases: vec![Register, Reconstruct, Verify, Renew, Reconstruct, Verify],
            subset: None,
            timing: Timing::default(),
            attacks: Attacks::default(),
            bench: BenchConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Everything derived from a validated configuration.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub field: FieldRef,
    pub group: Option<GroupRef>,
    pub params: SpssParams,
}

pub fn role_names(holders: usize) -> Vec<String> {
    let mut v = vec!["owner".to_string(), "calculator".into(), "verifier".into(), "enduser".into()];
    v.extend((1..=holders).map(|i| format!("holder{i}")));
    v
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    /// Parse `text`, then apply `key.path=value` overrides. Values are read
    /// as TOML and fall back to plain strings.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        for o in overrides {
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?}: expected key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let keys: Vec<&str> = path.trim().split('.').collect();
            let mut table = &mut root;
            for k in &keys[..keys.len() - 1] {
                table = table
                    .entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("override {path}: {k} is not a table")))?;
            }
            table.insert(keys[keys.len() - 1].to_string(), value);
        }
        toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Check referential validity and build the field, group and sharing
    /// parameters. Messages name the offending field path.
    pub fn resolve(&self) -> Result<Resolved> {
        let cfg = |m: String| Error::Config(m);
        self.topology.validate()?;
        self.tpv.validate()?;
        if self.channel.k < 2 {
            return Err(cfg(format!("channel.k: {} is too small", self.channel.k)));
        }
        let p = &self.placement;
        for (path, node) in [
            ("placement.owner", &p.owner),
            ("placement.verifier", &p.verifier),
            ("placement.calculator", &p.calculator),
            ("placement.end_user", &p.end_user),
        ] {
            if self.topology.node_index(node).is_none() {
                return Err(cfg(format!("{path}: unknown node {node:?}")));
            }
        }
        if p.holders.len() != self.holders {
            return Err(cfg(format!(
                "placement.holders: {} entries for {} holders",
                p.holders.len(),
                self.holders
            )));
        }
        for (i, node) in p.holders.iter().enumerate() {
            if self.topology.node_index(node).is_none() {
                return Err(cfg(format!("placement.holders[{i}]: unknown node {node:?}")));
            }
        }
        let roles = role_names(self.holders);
        for name in self.clock_skew_us.keys() {
            if !roles.contains(name) {
                return Err(cfg(format!("clock_skew_us.{name}: unknown role")));
            }
        }
        let holder_ok = |j: u64| j >= 1 && j as usize <= self.holders;
        if let Some(j) = self.attacks.corrupt_holder {
            if !holder_ok(j) {
                return Err(cfg(format!("attacks.corrupt_holder: no holder {j}")));
            }
        }
        for (i, &j) in self.attacks.drop_holders.iter().enumerate() {
            if !holder_ok(j) {
                return Err(cfg(format!("attacks.drop_holders[{i}]: no holder {j}")));
            }
        }
        if let Some(b) = &self.attacks.bit_flip_channel {
            for (path, r) in [("from", &b.from), ("to", &b.to)] {
                if !roles.contains(r) {
                    return Err(cfg(format!("attacks.bit_flip_channel.{path}: unknown role {r:?}")));
                }
            }
            if b.nth == 0 {
                return Err(cfg("attacks.bit_flip_channel.nth: counts from 1".into()));
            }
        }
        if let Some(s) = &self.subset {
            if s.len() != self.threshold || s.iter().any(|&j| !holder_ok(j)) {
                return Err(cfg(format!(
                    "subset: need {} distinct holders in 1..={}",
                    self.threshold, self.holders
                )));
            }
        }
        if self.data.size_bytes == 0 && self.data.content.is_none() {
            return Err(cfg("data.size_bytes: must be positive".into()));
        }
        if self.phases.is_empty() {
            return Err(cfg("phases: empty".into()));
        }
        if self.bench.repetitions == 0 {
            return Err(cfg("bench.repetitions: must be positive".into()));
        }
        let (field, group) = self.resolve_field_and_group()?;
        if group.is_none() && self.phases.contains(&PhaseKind::Renew) {
            return Err(cfg("phases: renew needs a group (group = \"none\")".into()));
        }
        let params = SpssParams::new(self.threshold, self.holders, field.clone())
            .map_err(|e| cfg(format!("threshold/holders: {e}")))?;
        for (path, pw) in [("data.password", Some(&self.data.password)), ("data.attempt", self.data.attempt.as_ref())] {
            if let Some(pw) = pw {
                Password::from_bytes(&params, pw.as_bytes()).map_err(|e| cfg(format!("{path}: {e}")))?;
            }
        }
        Ok(Resolved { field, group, params })
    }

    fn resolve_field_and_group(&self) -> Result<(FieldRef, Option<GroupRef>)> {
        let group_spec = self.group.trim();
        if self.field.trim() == "group" {
            let group = match group_spec {
                "toy" => RenewalGroup::toy(),
                "rfc5114-2048-256" => RenewalGroup::rfc5114_2048_256(),
                other => {
                    return Err(Error::Config(format!(
                        "field: \"group\" needs a fixed group, not {other:?}"
                    )))
                }
            };
            return Ok((group.field().clone(), Some(group)));
        }
        let field = PrimeField::parse(&self.field).map_err(|e| Error::Config(format!("field: {e}")))?;
        if group_spec == "none" {
            return Ok((field, None));
        }
        let group = RenewalGroup::parse(group_spec, &field).map_err(|e| Error::Config(format!("group: {e}")))?;
        Ok((field, Some(group)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = ScenarioConfig::default();
        let r = c.resolve().unwrap();
        assert_eq!(r.field.bits(), 256);
        assert_eq!(r.group.unwrap().q(), r.field.modulus());
        let parsed = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn toml_overrides_and_paths() {
        let c = ScenarioConfig::from_toml(
            r#"
            seed = 9
            field = "mersenne:127"
            group = "none"
            phases = ["register", "reconstruct"]
            [attacks]
            drop_holders = [1, 2]
            [tpv]
            k = 16
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.tpv.k, 16);
        let r = c.resolve().unwrap();
        assert!(r.group.is_none());

        let err = |t: &str| ScenarioConfig::from_toml(t).and_then(|c| c.resolve().map(|_| ())).unwrap_err().to_string();
        assert!(err("[placement]\nverifier = \"Nowhere\"").contains("placement.verifier"));
        assert!(err("[placement]\nholders = [\"Koganei-1\"]").contains("placement.holders"));
        assert!(err("[attacks]\ncorrupt_holder = 7").contains("attacks.corrupt_holder"));
        assert!(err("[clock_skew_us]\nmallory = 5").contains("clock_skew_us.mallory"));
        assert!(err("bogus = 1").contains("bogus"));
        assert!(err("field = \"mersenne:127\"").contains("group"));
        assert!(err("field = \"mersenne:127\"\ngroup = \"none\"").contains("renew"));
        assert!(err("[attacks.bit_flip_channel]\nfrom = \"owner\"\nto = \"eve\"").contains("bit_flip_channel.to"));
    }

    #[test]
    fn dotted_overrides() {
        let sets = [
            "tpv.k=64".to_string(),
            "attacks.drop_holders=[3, 4]".to_string(),
            "data.password=hunter2".to_string(),
            "seed=9".to_string(),
        ];
        let c = ScenarioConfig::from_toml_with("seed = 1\n[tpv]\nmode = \"its\"", &sets).unwrap();
        assert_eq!(c.tpv.k, 64);
        assert_eq!(c.attacks.drop_holders, vec![3, 4]);
        assert_eq!(c.data.password, "hunter2");
        assert_eq!(c.seed, 9);
        let err = ScenarioConfig::from_toml_with("", &["tpv.nope=1".to_string()]).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
        assert!(ScenarioConfig::from_toml_with("", &["seed".to_string()]).is_err());
    }

    #[test]
    fn generated_group_over_mersenne_field() {
        let c = ScenarioConfig {
            field: "mersenne:61".into(),
            group: "generate:128".into(),
            ..ScenarioConfig::default()
        };
        assert!(c.resolve().unwrap_err().to_string().contains("data.password"));
        let mut c = c;
        c.data.password = "pw".into();
        let r = c.resolve().unwrap();
        assert_eq!(r.group.unwrap().q(), r.field.modulus());
    }
}
