use std::collections::BTreeMap;
use std::path::Path;

use bkt_core::density::{ChargeDensity, CoverConfig};
use bkt_core::lattice::{Kind, LatticeDomain};
use bkt_core::weights::WeightSpec;
use serde::{Deserialize, Serialize};

/// Error surfaced as exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: Kind,
    #[serde(rename = "L")]
    pub l: usize,
}

impl DomainSpec {
    pub fn build(&self) -> Result<LatticeDomain, ConfigError> {
        LatticeDomain::new(self.kind, self.l).map_err(|e| invalid(format!("domain: {e}")))
    }
}

/// Everything a subcommand may read. Command-line flags override file values.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_test: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_cut: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_cut: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cg_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense_cutoff: Option<usize>,
    /// Sparse map "a,b" → charge.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<BTreeMap<String, i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sides: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
}

pub const SCHEMA: &str = r#"Config file (JSON, all keys optional, unknown keys rejected):
  domain        {"kind": "free|periodic|zero", "L": int}
  model         "gff" | "iv" | "villain"                      (sample)
  beta, v       inverse temperature, normalisation vertex
  weights       {"type": "fejer", "N": int} | {"type": "coeffs", "values": [...]}
  profile       "paper" | "test-scaled";  m_test in {2,4,8}
  seed, chains, steps, burn_in                                (sample, duality)
  k_cut, m_cut, nodes                                         (duality)
  cg_tol, dense_cutoff, sides                                 (green)
  density       {"a,b": charge, ...}                          (cover, spinwave)
  x             [x0, x1]                                      (duality)
  dump          max terms in the full expansion dump          (expand)
  suite         "identities" | "bounds" | "duality" | "all"  (verify)
  format        "json" | "csv"
Flags override file values. Output goes to --out, else $BKT_OUT_DIR/<command>.<ext>, else stdout."#;

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// serde_json errors carry line and column.
pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| invalid(format!("line {} column {}: {e}", e.line(), e.column())))
}

impl RunConfig {
    pub fn domain(&self) -> Result<LatticeDomain, ConfigError> {
        self.domain.as_ref().ok_or_else(|| invalid("missing domain (use --kind/--L or the config key)"))?.build()
    }

    pub fn beta(&self) -> Result<f64, ConfigError> {
        match self.beta {
            Some(b) if b > 0.0 && b.is_finite() => Ok(b),
            Some(b) => Err(invalid(format!("beta must be positive and finite, got {b}"))),
            None => Err(invalid("missing beta")),
        }
    }

    pub fn profile_name(&self) -> &str {
        self.profile.as_deref().unwrap_or("paper")
    }

    pub fn cover(&self) -> Result<CoverConfig, ConfigError> {
        match self.profile_name() {
            "paper" => Ok(CoverConfig::paper()),
            "test-scaled" => {
                let m = self.m_test.unwrap_or(bkt_core::verify::TEST_SCALED_M);
                if ![2, 4, 8].contains(&m) {
                    return Err(invalid(format!("m_test must be 2, 4 or 8, got {m}")));
                }
                Ok(CoverConfig::test_scaled(m))
            }
            p => Err(invalid(format!("unknown profile {p:?}"))),
        }
    }

    pub fn density(&self, dom: &LatticeDomain) -> Result<ChargeDensity, ConfigError> {
        let map = self.density.as_ref().ok_or_else(|| invalid("missing density"))?;
        parse_density(map, dom)
    }
}

pub fn parse_density(map: &BTreeMap<String, i64>, dom: &LatticeDomain) -> Result<ChargeDensity, ConfigError> {
    let mut sites = Vec::with_capacity(map.len());
    for (k, &q) in map {
        let (a, b) = parse_pair(k).ok_or_else(|| invalid(format!("density key {k:?} is not \"a,b\"")))?;
        if a >= dom.side() || b >= dom.side() {
            return Err(invalid(format!("density site {k} outside the L={} box", dom.side())));
        }
        sites.push(((a, b), q));
    }
    ChargeDensity::from_sites(dom, &sites).map_err(|e| invalid(format!("density: {e}")))
}

pub fn parse_pair(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_and_reports_position() {
        let e = parse("{\n  \"beta\": 1,\n  \"colour\": 3\n}").unwrap_err();
        assert!(e.0.contains("line 3"), "{}", e.0);
        let e = parse("{\"beta\": 1,,}").unwrap_err();
        assert!(e.0.starts_with("line 1 column"), "{}", e.0);
    }

    #[test]
    fn density_map() {
        let dom = LatticeDomain::free(4);
        let cfg = parse(r#"{"density": {"0,0": 1, "1, 2": -1}}"#).unwrap();
        let r = cfg.density(&dom).unwrap();
        assert_eq!(r.charge(), 0);
        assert_eq!(r.support(), vec![0, 6]);
        assert!(parse_density(&BTreeMap::from([("9,0".to_string(), 1)]), &dom).is_err());
    }

    #[test]
    fn profiles() {
        let mut c = RunConfig::default();
        assert_eq!(c.cover().unwrap().m, 1 << 16);
        c.profile = Some("test-scaled".into());
        c.m_test = Some(4);
        assert_eq!(c.cover().unwrap().m, 4);
        c.m_test = Some(3);
        assert!(c.cover().is_err());
    }
}
