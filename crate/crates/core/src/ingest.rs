//! Rating dump readers and stream preprocessing.
//!
//! Readers are lazy iterators, so multi-gigabyte dumps are never held in
//! memory. [`preprocess`] keeps only ratings at or above the threshold (the
//! survivors are what gets buffered for the timestamp sort), orders them by
//! time with ties kept in input order, binarizes and numbers them.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

use crate::config::{ItemId, RatingEvent, UserId};

pub const MOVIELENS_HEADER: [&str; 4] = ["userId", "movieId", "rating", "timestamp"];

/// One row of a rating dump before filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRating {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub rating: f64,
    pub timestamp: i64,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {error}", path.display())]
    Io { path: PathBuf, error: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl IngestError {
    fn io(path: &Path, error: io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), error }
    }

    fn parse(path: &Path, line: u64, message: impl Into<String>) -> Self {
        IngestError::Parse { path: path.to_path_buf(), line, message: message.into() }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        IngestError::Format { path: path.to_path_buf(), message: message.into() }
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T, IngestError> {
    raw.trim().parse().map_err(|_| IngestError::parse(path, line, format!("invalid {name} `{raw}`")))
}

/// Streams a MovieLens `ratings.csv` (`userId,movieId,rating,timestamp`).
pub struct MovieLensReader {
    path: PathBuf,
    records: csv::StringRecordsIntoIter<File>,
}

impl MovieLensReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref().to_path_buf();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(&path)
            .map_err(|e| IngestError::io(&path, e.into()))?;
        let header = reader.headers().map_err(|e| IngestError::format(&path, e.to_string()))?;
        if header.iter().map(str::trim).ne(MOVIELENS_HEADER) {
            return Err(IngestError::format(
                &path,
                format!(
                    "expected header `{}`, found `{}`",
                    MOVIELENS_HEADER.join(","),
                    header.iter().collect::<Vec<_>>().join(",")
                ),
            ));
        }
        Ok(MovieLensReader { path, records: reader.into_records() })
    }
}

impl Iterator for MovieLensReader {
    type Item = Result<RawRating, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = match self.records.next()? {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Some(Err(IngestError::parse(&self.path, line, e.to_string())));
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let p = &self.path;
        Some((|| {
            if record.len() != 4 {
                return Err(IngestError::parse(p, line, format!("expected 4 fields, found {}", record.len())));
            }
            Ok(RawRating {
                user_id: field(p, line, "userId", &record[0])?,
                item_id: field(p, line, "movieId", &record[1])?,
                rating: field(p, line, "rating", &record[2])?,
                timestamp: field(p, line, "timestamp", &record[3])?,
            })
        })())
    }
}

pub fn load_movielens(path: impl AsRef<Path>) -> Result<Vec<RawRating>, IngestError> {
    MovieLensReader::open(path)?.collect()
}

/// `YYYY-MM-DD` at midnight UTC, in epoch seconds.
pub fn date_to_epoch(date: &str) -> Option<i64> {
    let d = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d").ok()?;
    Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp())
}

struct OpenMovieFile {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line: u64,
    movie: Option<ItemId>,
}

/// Streams a Netflix Prize `training_set` directory: one file per movie,
/// `<MovieID>:` then `CustomerID,Rating,Date` rows. Files are read in name order.
pub struct NetflixReader {
    files: std::vec::IntoIter<PathBuf>,
    current: Option<OpenMovieFile>,
    allowlist: Option<HashSet<ItemId>>,
}

impl NetflixReader {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, IngestError> {
        let dir = dir.as_ref();
        let mut files = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| IngestError::io(dir, e))? {
            let entry = entry.map_err(|e| IngestError::io(dir, e))?;
            let is_file = entry.file_type().map_err(|e| IngestError::io(&entry.path(), e))?.is_file();
            if is_file {
                files.push(entry.path());
            }
        }
        files.sort();
        Ok(NetflixReader { files: files.into_iter(), current: None, allowlist: None })
    }

    /// Keeps only movies whose id is in the set.
    pub fn with_allowlist(mut self, items: HashSet<ItemId>) -> Self {
        self.allowlist = Some(items);
        self
    }

    fn next_in_file(&mut self) -> Option<Result<RawRating, IngestError>> {
        let f = self.current.as_mut()?;
        loop {
            let text = match f.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(IngestError::io(&f.path, e))),
            };
            f.line += 1;
            let text = text.trim();
            if text.is_empty() {
                continue;
            }
            if let Some(id) = text.strip_suffix(':') {
                match id.trim().parse() {
                    Ok(m) => f.movie = Some(m),
                    Err(_) => {
                        return Some(Err(IngestError::parse(&f.path, f.line, format!("invalid movie header `{text}`"))))
                    }
                }
                continue;
            }
            let Some(movie) = f.movie else {
                return Some(Err(IngestError::format(&f.path, "missing `<MovieID>:` header line")));
            };
            if self.allowlist.as_ref().is_some_and(|a| !a.contains(&movie)) {
                continue;
            }
            let cols: Vec<&str> = text.split(',').collect();
            if cols.len() != 3 {
                return Some(Err(IngestError::parse(
                    &f.path,
                    f.line,
                    format!("expected 3 fields, found {}", cols.len()),
                )));
            }
            let (p, line) = (&f.path, f.line);
            return Some((|| {
                let timestamp = date_to_epoch(cols[2])
                    .ok_or_else(|| IngestError::parse(p, line, format!("invalid date `{}`", cols[2])))?;
                Ok(RawRating {
                    user_id: field(p, line, "CustomerID", cols[0])?,
                    item_id: movie,
                    rating: field(p, line, "Rating", cols[1])?,
                    timestamp,
                })
            })());
        }
    }
}

impl Iterator for NetflixReader {
    type Item = Result<RawRating, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(item) = self.next_in_file() {
                if item.is_err() {
                    // stop reading this file after the first error
                    self.current = None;
                }
                return Some(item);
            }
            let path = self.files.next()?;
            let file = match File::open(&path) {
                Ok(f) => f,
                Err(e) => return Some(Err(IngestError::io(&path, e))),
            };
            self.current = Some(OpenMovieFile { path, lines: BufReader::new(file).lines(), line: 0, movie: None });
        }
    }
}

pub fn load_netflix(dir: impl AsRef<Path>) -> Result<Vec<RawRating>, IngestError> {
    NetflixReader::open(dir)?.collect()
}

/// One item id per line; blank lines and `#` comments ignored.
pub fn load_item_allowlist(path: impl AsRef<Path>) -> Result<HashSet<ItemId>, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if !line.is_empty() {
            out.insert(field(path, idx as u64 + 1, "item id", line)?);
        }
    }
    Ok(out)
}

/// Filter `rating >= min_rating`, stable sort by timestamp, binarize, number from 0.
pub fn preprocess<I: IntoIterator<Item = RawRating>>(raw: I, min_rating: f64) -> Vec<RatingEvent> {
    let mut kept: Vec<RawRating> = raw.into_iter().filter(|r| r.rating >= min_rating).collect();
    kept.sort_by_key(|r| r.timestamp);
    kept.into_iter()
        .enumerate()
        .map(|(seq, r)| RatingEvent::new(seq as u64, r.user_id, r.item_id, r.timestamp))
        .collect()
}

/// [`preprocess`] over a fallible reader, stopping at the first error.
pub fn preprocess_results<I, E>(raw: I, min_rating: f64) -> Result<Vec<RatingEvent>, E>
where
    I: IntoIterator<Item = Result<RawRating, E>>,
{
    let mut kept = Vec::new();
    for r in raw {
        let r = r?;
        if r.rating >= min_rating {
            kept.push(r);
        }
    }
    Ok(preprocess(kept, min_rating))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn raw(user: u64, item: u64, rating: f64, ts: i64) -> RawRating {
        RawRating { user_id: user, item_id: item, rating, timestamp: ts }
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn movielens_row_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "userId,movieId,rating,timestamp\n1,296,5.0,1147880044\n");
        assert_eq!(load_movielens(&p).unwrap(), vec![raw(1, 296, 5.0, 1147880044)]);
    }

    #[test]
    fn movielens_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "userId,movieId,rating,timestamp\n");
        assert!(load_movielens(&p).unwrap().is_empty());
    }

    #[test]
    fn movielens_short_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "userId,movieId,rating,timestamp\n1,2,5.0,10\n1,296,5.0\n");
        match load_movielens(&p) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "bad.csv", "userId,movieId,rating,timestamp\nx,2,5.0,10\n");
        assert!(matches!(load_movielens(&p), Err(IngestError::Parse { line: 2, .. })));
    }

    #[test]
    fn movielens_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "1,296,5.0,1147880044\n");
        assert!(matches!(MovieLensReader::open(&p), Err(IngestError::Format { .. })));
        let p = write(dir.path(), "empty.csv", "");
        assert!(matches!(MovieLensReader::open(&p), Err(IngestError::Format { .. })));
    }

    #[test]
    fn netflix_date_conversion() {
        assert_eq!(date_to_epoch("2005-09-06"), Some(1125964800));
        assert_eq!(date_to_epoch("1970-01-01"), Some(0));
        assert_eq!(date_to_epoch("2005-13-01"), None);
    }

    #[test]
    fn netflix_files() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "mv_0000001.txt", "1:\n1488844,3,2005-09-06\n");
        write(dir.path(), "mv_0000002.txt", "2:\n822109,5,2005-05-13\n885013,4,2005-10-19\n");
        let rows = load_netflix(dir.path()).unwrap();
        assert_eq!(rows[0], raw(1488844, 1, 3.0, 1125964800));
        assert_eq!(rows.len(), 3);
        assert!(rows[1..].iter().all(|r| r.item_id == 2));

        let only2 = NetflixReader::open(dir.path()).unwrap().with_allowlist(HashSet::from([2]));
        assert_eq!(only2.count(), 2);
    }

    #[test]
    fn netflix_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "mv_0000001.txt", "1488844,3,2005-09-06\n");
        assert!(matches!(load_netflix(dir.path()), Err(IngestError::Format { .. })));
    }

    #[test]
    fn netflix_bad_row() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "mv_0000001.txt", "1:\n1488844,3\n");
        assert!(matches!(load_netflix(dir.path()), Err(IngestError::Parse { line: 2, .. })));
    }

    #[test]
    fn allowlist_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "allow.txt", "# subset\n1\n\n30 # trailing\n");
        assert_eq!(load_item_allowlist(&p).unwrap(), HashSet::from([1, 30]));
    }

    #[test]
    fn preprocess_examples() {
        let out = preprocess([raw(1, 1, 4.5, 0), raw(1, 2, 5.0, 0), raw(1, 3, 3.0, 0)], 5.0);
        assert_eq!(out, vec![RatingEvent::new(0, 1, 2, 0)]);

        let out = preprocess([raw(1, 1, 5.0, 30), raw(2, 2, 5.0, 10), raw(3, 3, 5.0, 20)], 5.0);
        assert_eq!(out.iter().map(|e| e.timestamp).collect::<Vec<_>>(), vec![10, 20, 30]);

        let out = preprocess([raw(1, 9, 5.0, 7), raw(2, 8, 5.0, 7), raw(3, 7, 5.0, 7)], 5.0);
        assert_eq!(out.iter().map(|e| e.item_id).collect::<Vec<_>>(), vec![9, 8, 7]);
    }

    proptest! {
        #[test]
        fn preprocess_output_is_ordered_and_binary(
            rows in prop::collection::vec((0u64..50, 0u64..50, 1u8..=10, 0i64..1000), 0..300)
        ) {
            let input: Vec<RawRating> = rows.iter().map(|&(u, i, r, t)| raw(u, i, r as f64 / 2.0, t)).collect();
            let out = preprocess(input.clone(), 5.0);
            prop_assert!(out.len() <= input.len());
            prop_assert_eq!(out.len(), input.iter().filter(|r| r.rating >= 5.0).count());
            prop_assert!(out.iter().all(|e| e.rating == 1.0));
            prop_assert!(out.windows(2).all(|w| w[0].timestamp <= w[1].timestamp && w[0].seq < w[1].seq));
        }
    }
}
