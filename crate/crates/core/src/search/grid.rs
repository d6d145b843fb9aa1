use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One grid coordinate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    List(Vec<ParamValue>),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Self::Int(i) => Some(i as f64),
            Self::Float(f) => Some(f),
            _ => None,
        }
    }

    /// JSON literal, as written to trial config files.
    pub fn to_literal(&self) -> String {
        serde_json::to_string(self).expect("param values serialize")
    }

    pub fn from_literal(text: &str) -> Result<Self> {
        serde_json::from_str(text.trim())
            .map_err(|e| Error::Config(format!("bad value literal {text:?}: {e}")))
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_literal())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub values: Vec<ParamValue>,
}

/// Cartesian parameter grid. File form (TOML), axes in declaration order:
///
/// ```toml
/// [[axis]]
/// name = "lr"
/// values = [1e-4, 2e-4]
///
/// [[axis]]
/// name = "milestones"
/// values = [[1, 5, 9], [2, 6, 10]]
/// ```
///
/// An axis named `seed` with integer values sets each trial's seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    #[serde(rename = "axis", default)]
    pub axes: Vec<Axis>,
}

/// Name of the axis that overrides per-trial seeds.
pub const SEED_AXIS: &str = "seed";

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

impl ParamGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        let g = Self { axes };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for a in &self.axes {
            if !valid_name(&a.name) || a.name == "trial_id" {
                return Err(Error::Argument(format!("invalid axis name {:?}", a.name)));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Argument(format!("axis {:?} declared twice", a.name)));
            }
            if a.values.is_empty() {
                return Err(Error::Argument(format!("axis {:?} has no values", a.name)));
            }
            if a.name == SEED_AXIS
                && a.values.iter().any(|v| !matches!(v, ParamValue::Int(i) if *i >= 0))
            {
                return Err(Error::Argument("seed axis values must be non-negative integers".into()));
            }
        }
        Ok(())
    }

    /// Number of grid points.
    pub fn size(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let g: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn digest(&self) -> String {
        crate::digest::sha256_hex(&serde_json::to_vec(self).expect("grid serializes"))
    }
}

/// Axis name to value, in axis order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment(pub Vec<(String, ParamValue)>);

impl Assignment {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl Serialize for Assignment {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for Assignment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Assignment;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of axis values")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Assignment, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry()? {
                    out.push((k, v));
                }
                Ok(Assignment(out))
            }
        }
        d.deserialize_map(V)
    }
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trial_id: usize,
    pub assignment: Assignment,
    pub seed: u64,
}

impl TrialConfig {
    /// Flat `key = value` text handed to trainers: `trial_id` and `seed` first,
    /// then one line per axis with a JSON literal value.
    pub fn to_config_text(&self) -> String {
        let mut s = format!("trial_id = {}\nseed = {}\n", self.trial_id, self.seed);
        for (k, v) in self.assignment.iter() {
            if k != SEED_AXIS {
                s.push_str(&format!("{k} = {}\n", v.to_literal()));
            }
        }
        s
    }

    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut trial_id = None;
        let mut seed = None;
        let mut assignment = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let int = || {
                v.parse::<u64>()
                    .map_err(|_| Error::Config(format!("config line {}: {k} must be an integer", n + 1)))
            };
            match k {
                "trial_id" => trial_id = Some(int()? as usize),
                "seed" => seed = Some(int()?),
                _ => assignment.push((k.to_string(), ParamValue::from_literal(v)?)),
            }
        }
        Ok(Self {
            trial_id: trial_id.ok_or_else(|| Error::Config("config lacks trial_id".into()))?,
            assignment: Assignment(assignment),
            seed: seed.ok_or_else(|| Error::Config("config lacks seed".into()))?,
        })
    }

    pub fn describe(&self) -> String {
        let parts: Vec<String> = self.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("trial {} [{}]", self.trial_id, parts.join(", "))
    }
}

/// Every grid point in lexicographic order (last axis varies fastest).
/// Trials use `base_seed` unless the grid has a `seed` axis.
pub fn enumerate_grid(grid: &ParamGrid, base_seed: u64) -> Result<Vec<TrialConfig>> {
    grid.validate()?;
    let n = grid.size();
    let mut out = Vec::with_capacity(n);
    for id in 0..n {
        let mut rest = id;
        let mut picks = vec![0; grid.axes.len()];
        for (i, a) in grid.axes.iter().enumerate().rev() {
            picks[i] = rest % a.values.len();
            rest /= a.values.len();
        }
        let assignment: Vec<(String, ParamValue)> = grid
            .axes
            .iter()
            .zip(&picks)
            .map(|(a, &p)| (a.name.clone(), a.values[p].clone()))
            .collect();
        let seed = match assignment.iter().find(|(k, _)| k == SEED_AXIS) {
            Some((_, ParamValue::Int(s))) => *s as u64,
            _ => base_seed,
        };
        out.push(TrialConfig {
            trial_id: id,
            assignment: Assignment(assignment),
            seed,
        });
    }
    Ok(out)
}
