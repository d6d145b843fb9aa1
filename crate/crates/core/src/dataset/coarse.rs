use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::{Category, DetDataset};
use crate::scalar::Scalar;
use crate::error::{Error, Result};

/// Mapping from fine category ids to a coarser label table.
///
/// Text form, one entry per line: `fine_id coarse_id coarse_name`. The name is
/// the rest of the line and may contain spaces. Blank lines and lines starting
/// with `#` are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoarseLabelMap {
    entries: BTreeMap<u64, u64>,
    categories: Vec<Category>,
}

impl CoarseLabelMap {
    /// Build from explicit entries and a coarse table. Every table row must be
    /// referenced and every referenced coarse id must have a row.
    pub fn new(entries: BTreeMap<u64, u64>, categories: Vec<Category>) -> Result<Self> {
        let mut rows: HashMap<u64, usize> = HashMap::new();
        for c in &categories {
            if rows.insert(c.id, 0).is_some() {
                return Err(Error::Config(format!("coarse id {} listed twice", c.id)));
            }
        }
        for (&fine, coarse) in &entries {
            match rows.get_mut(coarse) {
                Some(n) => *n += 1,
                None => {
                    return Err(Error::Config(format!(
                        "fine id {fine} maps to unknown coarse id {coarse}"
                    )))
                }
            }
        }
        if let Some(c) = categories.iter().find(|c| rows[&c.id] == 0) {
            return Err(Error::Config(format!("coarse id {} is never used", c.id)));
        }
        Ok(Self {
            entries,
            categories,
        })
    }

    /// Every category maps to itself.
    pub fn identity(categories: &[Category]) -> Self {
        Self {
            entries: categories.iter().map(|c| (c.id, c.id)).collect(),
            categories: categories.to_vec(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut categories: Vec<Category> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Config(format!("coarse map line {}: {what}", lineno + 1));
            let mut parts = line.splitn(3, char::is_whitespace);
            let fine: u64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad fine id"))?;
            let coarse: u64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("bad coarse id"))?;
            let name = parts.next().map(str::trim).unwrap_or_default();
            if name.is_empty() {
                return Err(bad("missing coarse name"));
            }
            if entries.insert(fine, coarse).is_some() {
                return Err(bad(&format!("fine id {fine} mapped twice")));
            }
            match categories.iter().find(|c| c.id == coarse) {
                Some(c) if c.name != name => {
                    return Err(bad(&format!(
                        "coarse id {coarse} named both {:?} and {name:?}",
                        c.name
                    )))
                }
                Some(_) => {}
                None => categories.push(Category {
                    id: coarse,
                    name: name.to_string(),
                }),
            }
        }
        Self::new(entries, categories)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let names: HashMap<u64, &str> = self
            .categories
            .iter()
            .map(|c| (c.id, c.name.as_str()))
            .collect();
        let mut out = String::new();
        for (fine, coarse) in &self.entries {
            let _ = writeln!(out, "{fine} {coarse} {}", names[coarse]);
        }
        out
    }

    pub fn coarse_of(&self, fine: u64) -> Option<u64> {
        self.entries.get(&fine).copied()
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    /// Copy of `ds` with every annotation moved to its coarse category.
    pub fn relabel<T: Scalar>(&self, ds: &DetDataset<T>) -> Result<DetDataset<T>> {
        self.check_total(&ds.categories)?;
        let mut out = ds.clone();
        for a in &mut out.annotations {
            a.category_id = self.entries[&a.category_id];
        }
        out.categories = self.categories.clone();
        Ok(out)
    }

    /// Fails when some fine category of `fine` has no mapping.
    pub fn check_total(&self, fine: &[Category]) -> Result<()> {
        let missing: Vec<u64> = fine
            .iter()
            .map(|c| c.id)
            .filter(|id| !self.entries.contains_key(id))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "coarse map does not cover fine categories {missing:?}"
            )))
        }
    }
}
