use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One raw rating line.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
}

impl RatingRecord {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, rating: f64) -> Self {
        RatingRecord {
            user_id: user_id.into(),
            item_id: item_id.into(),
            rating,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Tab,
    Comma,
}

impl Delimiter {
    pub fn as_char(self) -> char {
        match self {
            Delimiter::Tab => '\t',
            Delimiter::Comma => ',',
        }
    }
}

impl FromStr for Delimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tab" | "\\t" | "\t" => Ok(Delimiter::Tab),
            "comma" | "," => Ok(Delimiter::Comma),
            other => Err(Error::config(format!("unknown delimiter `{other}`"))),
        }
    }
}

impl std::fmt::Display for Delimiter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Delimiter::Tab => "tab",
            Delimiter::Comma => "comma",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedRatings {
    /// Deduplicated on (user, item); a later line overwrites the rating of an
    /// earlier one but keeps its position.
    pub records: Vec<RatingRecord>,
    pub malformed: usize,
    pub duplicates: usize,
}

/// Reads `user<sep>item<sep>rating[<sep>...]` lines.
pub fn parse_ratings<R: BufRead>(source: R, delimiter: Delimiter) -> Result<ParsedRatings> {
    let sep = delimiter.as_char();
    let mut out = ParsedRatings::default();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for line in source.lines() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(sep).map(str::trim);
        let parsed = match (fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(i), Some(w)) if !u.is_empty() && !i.is_empty() => w
                .parse::<f64>()
                .ok()
                .filter(|w| w.is_finite())
                .map(|w| (u, i, w)),
            _ => None,
        };
        let Some((user, item, rating)) = parsed else {
            out.malformed += 1;
            continue;
        };
        let key = (user.to_owned(), item.to_owned());
        match seen.get(&key) {
            Some(&idx) => {
                out.records[idx].rating = rating;
                out.duplicates += 1;
            }
            None => {
                seen.insert(key, out.records.len());
                out.records.push(RatingRecord::new(user, item, rating));
            }
        }
    }
    if out.records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no valid rating lines ({} malformed)",
            out.malformed
        )));
    }
    Ok(out)
}

/// Iteratively drops users with fewer than `min_user` and items with fewer than
/// `min_item` ratings until nothing changes.
pub fn kcore_filter(
    records: &[RatingRecord],
    min_user: usize,
    min_item: usize,
) -> Vec<RatingRecord> {
    let mut alive = vec![true; records.len()];
    loop {
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for (r, _) in records.iter().zip(&alive).filter(|(_, &a)| a) {
            *user_count.entry(&r.user_id).or_default() += 1;
            *item_count.entry(&r.item_id).or_default() += 1;
        }
        let mut changed = false;
        for (r, a) in records.iter().zip(alive.iter_mut()) {
            if *a
                && (user_count[r.user_id.as_str()] < min_user
                    || item_count[r.item_id.as_str()] < min_item)
            {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    records
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(r, _)| r.clone())
        .collect()
}

/// Dense 0-based ids for opaque tokens, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab::default();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&idx) = self.index.get(token) {
            return idx;
        }
        let idx = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), idx);
        idx
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// One `index<TAB>token` line per entry.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(f, "{i}\t{t}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut v = Vocab::default();
        for (line_no, line) in text.lines().enumerate() {
            let bad = || Error::format(path.display().to_string(), format!("line {}", line_no + 1));
            let (idx, token) = line.split_once('\t').ok_or_else(bad)?;
            let idx: usize = idx.parse().map_err(|_| bad())?;
            if idx != line_no || v.insert(token) != idx {
                return Err(bad());
            }
        }
        Ok(v)
    }
}
