use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::{DatasetSplit, Interactions};
use crate::error::{Error, Result};

/// Layout of a rating file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatingFormat {
    /// `user<TAB>item<TAB>rating[<TAB>timestamp]`; any run of whitespace is
    /// accepted as the separator.
    Tab,
    /// `user::item::rating[::timestamp]`
    DoubleColon,
}

impl FromStr for RatingFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tab" | "tsv" => Ok(RatingFormat::Tab),
            "double-colon" | "dat" | "::" => Ok(RatingFormat::DoubleColon),
            other => Err(format!("unknown rating format `{other}`")),
        }
    }
}

impl std::fmt::Display for RatingFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RatingFormat::Tab => "tab",
            RatingFormat::DoubleColon => "double-colon",
        })
    }
}

/// One explicit rating with raw identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Rating {
    pub user: String,
    pub item: String,
    pub value: f64,
}

fn parse_line(line: &str, format: RatingFormat, lineno: usize) -> Result<Rating> {
    let fields: Vec<&str> = match format {
        RatingFormat::Tab => line.split_whitespace().collect(),
        RatingFormat::DoubleColon => line.split("::").map(str::trim).collect(),
    };
    if fields.len() < 3 || fields.len() > 4 {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected 3 or 4 fields, found {}", fields.len()),
        });
    }
    let value: f64 = fields[2].parse().map_err(|_| Error::Parse {
        line: lineno,
        message: format!("rating `{}` is not a number", fields[2]),
    })?;
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err(Error::Parse {
            line: lineno,
            message: "empty identifier".into(),
        });
    }
    Ok(Rating {
        user: fields[0].to_string(),
        item: fields[1].to_string(),
        value,
    })
}

/// Reads every rating line of `path`. Blank lines are skipped.
pub fn read_ratings(path: impl AsRef<Path>, format: RatingFormat) -> Result<Vec<Rating>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, format, idx + 1)?);
    }
    Ok(out)
}

/// Re-indexes raw ids densely (first-appearance order) and keeps ratings
/// `>= positive_threshold` as positives.
///
/// Every user and item appearing anywhere in `ratings` is indexed, including
/// those without a positive rating.
pub fn binarize(ratings: &[Rating], positive_threshold: f64) -> Result<Interactions> {
    let mut users: HashMap<&str, usize> = HashMap::new();
    let mut items: HashMap<&str, usize> = HashMap::new();
    let mut pairs = Vec::new();
    for r in ratings {
        let next = users.len();
        let u = *users.entry(r.user.as_str()).or_insert(next);
        let next = items.len();
        let i = *items.entry(r.item.as_str()).or_insert(next);
        if r.value >= positive_threshold {
            pairs.push((u, i));
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no rating >= {positive_threshold} among {} lines",
            ratings.len()
        )));
    }
    Interactions::from_pairs(users.len(), items.len(), pairs)
}

/// [`read_ratings`] followed by [`binarize`].
pub fn load_ratings(
    path: impl AsRef<Path>,
    format: RatingFormat,
    positive_threshold: f64,
) -> Result<Interactions> {
    binarize(&read_ratings(path, format)?, positive_threshold)
}

/// Builds a split from separate train and test rating files, indexing users
/// and items jointly (train first). Test tuples already in train, or whose
/// user has no training positive, are dropped.
pub fn load_presplit(
    train_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
    format: RatingFormat,
    positive_threshold: f64,
) -> Result<DatasetSplit> {
    let train_ratings = read_ratings(train_path, format)?;
    let test_ratings = read_ratings(test_path, format)?;
    let mut users: HashMap<&str, usize> = HashMap::new();
    let mut items: HashMap<&str, usize> = HashMap::new();
    let mut train_pairs = Vec::new();
    let mut test_pairs = Vec::new();
    let tagged = train_ratings
        .iter()
        .map(|r| (r, true))
        .chain(test_ratings.iter().map(|r| (r, false)));
    for (r, is_train) in tagged {
        let next = users.len();
        let u = *users.entry(r.user.as_str()).or_insert(next);
        let next = items.len();
        let i = *items.entry(r.item.as_str()).or_insert(next);
        if r.value >= positive_threshold {
            if is_train {
                train_pairs.push((u, i));
            } else {
                test_pairs.push((u, i));
            }
        }
    }
    if train_pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no training rating >= {positive_threshold}"
        )));
    }
    let (m, n) = (users.len(), items.len());
    let train = Interactions::from_pairs(m, n, train_pairs)?;
    let test = Interactions::from_pairs(
        m,
        n,
        test_pairs
            .into_iter()
            .filter(|&(u, i)| train.user_count(u) > 0 && !train.contains(u, i)),
    )?;
    let split = DatasetSplit {
        train,
        test,
        seed: 0,
    };
    split.validate()?;
    Ok(split)
}

const TRAIN_FILE: &str = "train.tsv";
const TEST_FILE: &str = "test.tsv";

fn write_pairs(path: &Path, data: &Interactions, seed: u64) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "# seed={seed} num_users={} num_items={}",
        data.num_users(),
        data.num_items()
    )
    .map_err(io)?;
    for (u, i) in data.positives() {
        writeln!(w, "{u}\t{i}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_pairs(path: &Path) -> Result<(u64, Interactions)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
    let mut seed = None;
    let mut num_users = None;
    let mut num_items = None;
    for token in header.trim_start_matches('#').split_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("bad header token `{token}`"),
        })?;
        let bad = || Error::Parse {
            line: 1,
            message: format!("bad header value `{token}`"),
        };
        match key {
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad())?),
            "num_users" => num_users = Some(value.parse::<usize>().map_err(|_| bad())?),
            "num_items" => num_items = Some(value.parse::<usize>().map_err(|_| bad())?),
            _ => {}
        }
    }
    let (Some(seed), Some(m), Some(n)) = (seed, num_users, num_items) else {
        return Err(Error::Parse {
            line: 1,
            message: "header must carry seed, num_users and num_items".into(),
        });
    };
    let mut pairs = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 2;
        let mut it = line.split('\t');
        let mut field = || -> Result<usize> {
            it.next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("expected `user<TAB>item`, got `{line}`"),
                })
        };
        let u = field()?;
        let i = field()?;
        pairs.push((u, i));
    }
    Ok((seed, Interactions::from_pairs(m, n, pairs)?))
}

/// Writes `train.tsv` and `test.tsv` into `dir`.
pub fn write_split(dir: impl AsRef<Path>, split: &DatasetSplit) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_pairs(&dir.join(TRAIN_FILE), &split.train, split.seed)?;
    write_pairs(&dir.join(TEST_FILE), &split.test, split.seed)
}

/// Reads a split previously written by [`write_split`].
pub fn read_split(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let (seed, train) = read_pairs(&dir.join(TRAIN_FILE))?;
    let (test_seed, test) = read_pairs(&dir.join(TEST_FILE))?;
    if seed != test_seed
        || train.num_users() != test.num_users()
        || train.num_items() != test.num_items()
    {
        return Err(Error::Precondition(
            "train and test headers disagree".into(),
        ));
    }
    Ok(DatasetSplit { train, test, seed })
}
