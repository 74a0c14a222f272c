use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// `1 - sqrt(2 * C_TR / (C_TE + C_R))`.
///
/// `c_tr` classes seen in training, `c_te` classes present at test time,
/// `c_r` classes to be recognized.
pub fn openness(c_tr: usize, c_te: usize, c_r: usize) -> Result<f64> {
    if c_tr == 0 || c_te == 0 || c_r == 0 {
        return Err(Error::invalid(format!(
            "openness needs positive class counts, got ({c_tr}, {c_te}, {c_r})"
        )));
    }
    Ok(1.0 - (2.0 * c_tr as f64 / (c_te + c_r) as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenSetSplit {
    pub dataset: String,
    pub known_class_ids: Vec<usize>,
    pub unknown_class_ids: Vec<usize>,
    pub c_tr: usize,
    pub c_te: usize,
    pub c_r: usize,
    pub openness: f64,
    pub seed: u64,
}

/// Randomly picks `num_known` of `all_class_ids` as knowns; the rest are unknown.
///
/// The selection shuffles the ids with a ChaCha8 stream seeded by `seed`,
/// then sorts each side ascending. `C_R` is taken equal to `C_TR`.
pub fn make_open_set_split(all_class_ids: &[usize], num_known: usize, seed: u64) -> Result<OpenSetSplit> {
    let mut ids = all_class_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != all_class_ids.len() {
        return Err(Error::invalid("class ids must be distinct"));
    }
    if num_known == 0 || num_known >= ids.len() {
        return Err(Error::invalid(format!(
            "num_known must be in 1..{}, got {num_known}",
            ids.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    ids.shuffle(&mut rng);
    let (known, unknown) = ids.split_at(num_known);
    OpenSetSplit::from_ids("", known.to_vec(), unknown.to_vec(), seed)
}

impl OpenSetSplit {
    /// Builds a split from explicit id lists.
    pub fn from_ids(
        dataset: &str,
        mut known: Vec<usize>,
        mut unknown: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        known.sort_unstable();
        unknown.sort_unstable();
        if known.is_empty() {
            return Err(Error::invalid("a split needs at least one known class"));
        }
        if known.windows(2).any(|w| w[0] == w[1]) || unknown.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate class id in split"));
        }
        if let Some(c) = known.iter().find(|c| unknown.contains(c)) {
            return Err(Error::invalid(format!("class {c} is both known and unknown")));
        }
        let c_tr = known.len();
        let c_te = known.len() + unknown.len();
        let c_r = c_tr;
        Ok(Self {
            dataset: dataset.to_owned(),
            known_class_ids: known,
            unknown_class_ids: unknown,
            c_tr,
            c_te,
            c_r,
            openness: openness(c_tr, c_te, c_r)?,
            seed,
        })
    }

    pub fn with_dataset(mut self, name: &str) -> Self {
        self.dataset = name.to_owned();
        self
    }

    pub fn num_known(&self) -> usize {
        self.known_class_ids.len()
    }

    /// Position of `class_id` among the known classes.
    pub fn known_index(&self, class_id: usize) -> Option<usize> {
        self.known_class_ids.iter().position(|&c| c == class_id)
    }

    pub fn to_manifest(&self) -> String {
        let join = |ids: &[usize]| ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.dataset);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "known = {}", join(&self.known_class_ids));
        let _ = writeln!(s, "unknown = {}", join(&self.unknown_class_ids));
        let _ = writeln!(s, "c_tr = {}", self.c_tr);
        let _ = writeln!(s, "c_te = {}", self.c_te);
        let _ = writeln!(s, "c_r = {}", self.c_r);
        let _ = writeln!(s, "openness = {:?}", self.openness);
        s
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut name = None;
        let mut seed = None;
        let mut known = None;
        let mut unknown = None;
        let parse_ids = |v: &str| -> Result<Vec<usize>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|p| p.trim().parse().map_err(|_| Error::Parse(format!("bad class id `{p}`"))))
                .collect()
        };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("manifest line `{line}` is not key = value")))?;
            let v = v.trim();
            match k.trim() {
                "name" => name = Some(v.to_owned()),
                "seed" => seed = Some(v.parse().map_err(|_| Error::Parse(format!("bad seed `{v}`")))?),
                "known" => known = Some(parse_ids(v)?),
                "unknown" => unknown = Some(parse_ids(v)?),
                "c_tr" | "c_te" | "c_r" | "openness" => {}
                other => return Err(Error::Parse(format!("unknown manifest key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("manifest is missing `{k}`"));
        Self::from_ids(
            &name.ok_or_else(|| missing("name"))?,
            known.ok_or_else(|| missing("known"))?,
            unknown.ok_or_else(|| missing("unknown"))?,
            seed.ok_or_else(|| missing("seed"))?,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_manifest())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::NotFound(path.display().to_string()));
        }
        Self::from_manifest(&std::fs::read_to_string(path)?)
    }
}
