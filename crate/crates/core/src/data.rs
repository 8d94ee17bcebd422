//! Coordinate-triplet ingestion, dense ID remapping, and the held-out split
//! protocol.
//!
//! A dataset is a C_U × C_I matrix stored as its non-missing entries only,
//! with the total dimensions kept explicitly; at the sparsity levels this
//! model targets, dense storage is impossible.

use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const DATASET_MAGIC: &[u8; 4] = b"HCPD";
const SPLIT_MAGIC: &[u8; 4] = b"HCPS";
const FILE_VERSION: u32 = 1;

/// One non-missing matrix entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub user: u32,
    pub item: u32,
    pub value: f64,
}

/// Triplet text flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripletFormat {
    Tsv,
    Csv,
}

impl TripletFormat {
    fn separator(self) -> char {
        match self {
            TripletFormat::Tsv => '\t',
            TripletFormat::Csv => ',',
        }
    }
}

/// What ingestion dropped or rewrote.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Duplicate (user, item) rows resolved by keeping the last occurrence.
    pub duplicates_replaced: usize,
    /// Zero-valued rows rejected (zeros are implicit in this representation).
    pub zeros_rejected: usize,
}

/// A sparse response matrix: explicit dimensions, non-missing entries, and
/// the external-ID dictionaries behind the dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    c_u: usize,
    c_i: usize,
    entries: Vec<Entry>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
}

impl SparseDataset {
    /// Build from already-dense indices; IDs become the index strings.
    pub fn from_dense_indices(c_u: usize, c_i: usize, entries: Vec<Entry>) -> Result<Self> {
        let user_ids = (0..c_u).map(|u| u.to_string()).collect();
        let item_ids = (0..c_i).map(|i| i.to_string()).collect();
        Self::new(c_u, c_i, entries, user_ids, item_ids)
    }

    pub fn new(
        c_u: usize,
        c_i: usize,
        entries: Vec<Entry>,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
    ) -> Result<Self> {
        if user_ids.len() != c_u || item_ids.len() != c_i {
            return Err(Error::Config(
                "ID dictionaries must match the matrix dimensions".into(),
            ));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.user as usize >= c_u || e.item as usize >= c_i {
                return Err(Error::Index(format!(
                    "entry ({}, {}) outside a {c_u} x {c_i} matrix",
                    e.user, e.item
                )));
            }
            if e.value == 0.0 || !e.value.is_finite() {
                return Err(Error::Config(format!(
                    "entry ({}, {}) has value {}; stored responses must be finite and nonzero",
                    e.user, e.item, e.value
                )));
            }
            if !seen.insert((e.user, e.item)) {
                return Err(Error::Config(format!(
                    "duplicate entry ({}, {})",
                    e.user, e.item
                )));
            }
        }
        Ok(SparseDataset {
            c_u,
            c_i,
            entries,
            user_ids,
            item_ids,
        })
    }

    pub fn c_u(&self) -> usize {
        self.c_u
    }

    pub fn c_i(&self) -> usize {
        self.c_i
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    /// Ratio of missing entries to the total number of entries.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.entries.len() as f64 / (self.c_u as f64 * self.c_i as f64)
    }

    pub fn total_cells(&self) -> u64 {
        self.c_u as u64 * self.c_i as u64
    }

    /// Coordinate -> value lookup table.
    pub fn value_map(&self) -> HashMap<(u32, u32), f64> {
        self.entries
            .iter()
            .map(|e| ((e.user, e.item), e.value))
            .collect()
    }

    pub fn max_response(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.value)
            .fold(0.0_f64, f64::max)
    }

    /// Write as triplet text using the external IDs.
    pub fn save_triplets<P: AsRef<Path>>(&self, path: P, format: TripletFormat) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let sep = format.separator();
        for e in &self.entries {
            writeln!(
                w,
                "{}{sep}{}{sep}{}",
                self.user_ids[e.user as usize], self.item_ids[e.item as usize], e.value
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_cache<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_u32::<LittleEndian>(FILE_VERSION)?;
        w.write_u64::<LittleEndian>(self.c_u as u64)?;
        w.write_u64::<LittleEndian>(self.c_i as u64)?;
        for ids in [&self.user_ids, &self.item_ids] {
            for id in ids.iter() {
                let bytes = id.as_bytes();
                w.write_u32::<LittleEndian>(bytes.len() as u32)?;
                w.write_all(bytes)?;
            }
        }
        w.write_u64::<LittleEndian>(self.entries.len() as u64)?;
        for e in &self.entries {
            w.write_u32::<LittleEndian>(e.user)?;
            w.write_u32::<LittleEndian>(e.item)?;
            w.write_f64::<LittleEndian>(e.value)?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a dataset cache (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FILE_VERSION {
            return Err(Error::Format(format!("unsupported cache version {version}")));
        }
        let c_u = r.read_u64::<LittleEndian>()? as usize;
        let c_i = r.read_u64::<LittleEndian>()? as usize;
        let mut read_ids = |count: usize| -> Result<Vec<String>> {
            let mut ids = Vec::with_capacity(count);
            for _ in 0..count {
                let len = r.read_u32::<LittleEndian>()? as usize;
                let mut buf = vec![0u8; len];
                r.read_exact(&mut buf)?;
                ids.push(String::from_utf8(buf).map_err(|_| {
                    Error::Format("dictionary entry is not valid UTF-8".into())
                })?);
            }
            Ok(ids)
        };
        let user_ids = read_ids(c_u)?;
        let item_ids = read_ids(c_i)?;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            entries.push(Entry {
                user: r.read_u32::<LittleEndian>()?,
                item: r.read_u32::<LittleEndian>()?,
                value: r.read_f64::<LittleEndian>()?,
            });
        }
        SparseDataset::new(c_u, c_i, entries, user_ids, item_ids)
    }

    pub fn save_cache<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_cache(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_cache<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_cache(&mut r)
    }
}

/// Load `user<sep>item<sep>value` triplets, remapping external IDs to dense
/// indices in first-appearance order. Duplicate coordinates keep the last
/// occurrence; zero-valued rows are rejected; both are counted in the report.
pub fn load_triplets<P: AsRef<Path>>(
    path: P,
    format: TripletFormat,
    has_header: bool,
) -> Result<(SparseDataset, LoadReport)> {
    let display = path.as_ref().display().to_string();
    let reader = BufReader::new(std::fs::File::open(&path)?);
    let sep = format.separator();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut slot: HashMap<(u32, u32), usize> = HashMap::new();
    let mut entries: Vec<Entry> = Vec::new();
    let mut report = LoadReport::default();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 && has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(sep);
        let user = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "missing user column".into()))?;
        let item = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "missing item column".into()))?;
        let value = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "missing value column".into()))?;
        if fields.next().is_some() {
            return Err(parse_err(lineno, "more than three columns".into()));
        }
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad value {value:?}")))?;
        if !value.is_finite() {
            return Err(parse_err(lineno, format!("non-finite value {value}")));
        }
        if value == 0.0 {
            report.zeros_rejected += 1;
            continue;
        }
        let u = *user_index.entry(user.to_string()).or_insert_with(|| {
            user_ids.push(user.to_string());
            (user_ids.len() - 1) as u32
        });
        let i = *item_index.entry(item.to_string()).or_insert_with(|| {
            item_ids.push(item.to_string());
            (item_ids.len() - 1) as u32
        });
        match slot.get(&(u, i)) {
            Some(&at) => {
                entries[at].value = value;
                report.duplicates_replaced += 1;
            }
            None => {
                slot.insert((u, i), entries.len());
                entries.push(Entry {
                    user: u,
                    item: i,
                    value,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Config(format!("{display}: no usable entries")));
    }
    if report.duplicates_replaced > 0 {
        log::warn!(
            "{display}: {} duplicate coordinates, kept the last occurrence of each",
            report.duplicates_replaced
        );
    }
    let data = SparseDataset::new(user_ids.len(), item_ids.len(), entries, user_ids, item_ids)?;
    Ok((data, report))
}

/// Held-out entries plus sampled missing coordinates of matching size.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutSet {
    pub nonmissing: Vec<Entry>,
    pub missing: Vec<(u32, u32)>,
}

/// Train/validation/test split: the five parts are pairwise disjoint as
/// coordinate sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub train: SparseDataset,
    pub validation: HeldOutSet,
    pub test: HeldOutSet,
    /// Non-missing entry count of the original dataset before splitting.
    pub original_entry_count: usize,
}

impl SplitSet {
    /// Missing-cell count of the original matrix.
    pub fn total_missing(&self) -> u64 {
        self.train.total_cells() - self.original_entry_count as u64
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SPLIT_MAGIC)?;
        w.write_u32::<LittleEndian>(FILE_VERSION)?;
        w.write_u64::<LittleEndian>(self.original_entry_count as u64)?;
        self.train.write_cache(w)?;
        for part in [&self.validation, &self.test] {
            w.write_u64::<LittleEndian>(part.nonmissing.len() as u64)?;
            for e in &part.nonmissing {
                w.write_u32::<LittleEndian>(e.user)?;
                w.write_u32::<LittleEndian>(e.item)?;
                w.write_f64::<LittleEndian>(e.value)?;
            }
            w.write_u64::<LittleEndian>(part.missing.len() as u64)?;
            for (u, i) in &part.missing {
                w.write_u32::<LittleEndian>(*u)?;
                w.write_u32::<LittleEndian>(*i)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SPLIT_MAGIC {
            return Err(Error::Format("not a split file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FILE_VERSION {
            return Err(Error::Format(format!("unsupported split version {version}")));
        }
        let original_entry_count = r.read_u64::<LittleEndian>()? as usize;
        let train = SparseDataset::read_cache(r)?;
        let mut parts = Vec::with_capacity(2);
        for _ in 0..2 {
            let n = r.read_u64::<LittleEndian>()? as usize;
            let mut nonmissing = Vec::with_capacity(n);
            for _ in 0..n {
                nonmissing.push(Entry {
                    user: r.read_u32::<LittleEndian>()?,
                    item: r.read_u32::<LittleEndian>()?,
                    value: r.read_f64::<LittleEndian>()?,
                });
            }
            let m = r.read_u64::<LittleEndian>()? as usize;
            let mut missing = Vec::with_capacity(m);
            for _ in 0..m {
                missing.push((r.read_u32::<LittleEndian>()?, r.read_u32::<LittleEndian>()?));
            }
            parts.push(HeldOutSet {
                nonmissing,
                missing,
            });
        }
        let test = parts.pop().expect("two parts");
        let validation = parts.pop().expect("two parts");
        Ok(SplitSet {
            train,
            validation,
            test,
            original_entry_count,
        })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut r)
    }
}

/// Hold out `test_frac` and `valid_frac` of the non-missing entries, plus an
/// equal number of uniformly sampled missing coordinates for each part.
///
/// Entry sampling is a seeded shuffle (uniform without replacement); missing
/// coordinates are drawn by rejection against both the entries and the
/// already-chosen coordinates.
pub fn split(data: &SparseDataset, test_frac: f64, valid_frac: f64, seed: u64) -> Result<SplitSet> {
    if !(test_frac > 0.0 && valid_frac > 0.0 && test_frac + valid_frac < 1.0) {
        return Err(Error::Config(format!(
            "held-out fractions ({test_frac}, {valid_frac}) must be positive and sum below 1"
        )));
    }
    let n = data.len();
    let n_test = ((n as f64) * test_frac).round() as usize;
    let n_valid = ((n as f64) * valid_frac).round() as usize;
    if n_test < 1 || n_valid < 1 || n_test + n_valid >= n {
        return Err(Error::Config(format!(
            "dataset with {n} entries is too small for a ({test_frac}, {valid_frac}) split"
        )));
    }
    let total_missing = data.total_cells() - n as u64;
    if (total_missing as usize) < n_test + n_valid {
        return Err(Error::Config(
            "matrix too dense: not enough missing cells to sample".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let test_idx: HashSet<usize> = order[..n_test].iter().cloned().collect();
    let valid_idx: HashSet<usize> = order[n_test..n_test + n_valid].iter().cloned().collect();
    let mut train_entries = Vec::with_capacity(n - n_test - n_valid);
    let mut test_nm = Vec::with_capacity(n_test);
    let mut valid_nm = Vec::with_capacity(n_valid);
    for (idx, e) in data.entries().iter().enumerate() {
        if test_idx.contains(&idx) {
            test_nm.push(*e);
        } else if valid_idx.contains(&idx) {
            valid_nm.push(*e);
        } else {
            train_entries.push(*e);
        }
    }
    // Missing coordinates: uniform rejection over the grid against the
    // entries and anything already drawn.
    let occupied: HashSet<(u32, u32)> = data.entries().iter().map(|e| (e.user, e.item)).collect();
    let mut chosen: HashSet<(u32, u32)> = HashSet::with_capacity(n_test + n_valid);
    let mut draw_missing = |count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<(u32, u32)>> {
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        let budget = 100 * count + 1000;
        while out.len() < count {
            attempts += 1;
            if attempts > budget {
                return Err(Error::Config(
                    "grid too dense: missing-coordinate sampling exceeded its retry budget".into(),
                ));
            }
            let u = rng.random_range(0..data.c_u() as u32);
            let i = rng.random_range(0..data.c_i() as u32);
            if occupied.contains(&(u, i)) || chosen.contains(&(u, i)) {
                continue;
            }
            chosen.insert((u, i));
            out.push((u, i));
        }
        Ok(out)
    };
    let test_missing = draw_missing(n_test, &mut rng)?;
    let valid_missing = draw_missing(n_valid, &mut rng)?;
    let train = SparseDataset::new(
        data.c_u(),
        data.c_i(),
        train_entries,
        data.user_ids().to_vec(),
        data.item_ids().to_vec(),
    )?;
    Ok(SplitSet {
        train,
        validation: HeldOutSet {
            nonmissing: valid_nm,
            missing: valid_missing,
        },
        test: HeldOutSet {
            nonmissing: test_nm,
            missing: test_missing,
        },
        original_entry_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n_users: u32, n_items: u32, fill: &[(u32, u32, f64)]) -> SparseDataset {
        let entries = fill
            .iter()
            .map(|&(user, item, value)| Entry { user, item, value })
            .collect();
        SparseDataset::from_dense_indices(n_users as usize, n_items as usize, entries).unwrap()
    }

    #[test]
    fn load_remaps_in_first_appearance_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.tsv");
        std::fs::write(&path, "alice\tmovie9\t4\nbob\tmovie9\t5\nalice\tmovie3\t1\n").unwrap();
        let (data, report) = load_triplets(&path, TripletFormat::Tsv, false).unwrap();
        assert_eq!(data.c_u(), 2);
        assert_eq!(data.c_i(), 2);
        assert_eq!(data.user_ids(), &["alice".to_string(), "bob".to_string()]);
        assert_eq!(data.item_ids(), &["movie9".to_string(), "movie3".to_string()]);
        assert_eq!(report, LoadReport::default());
        assert_eq!(data.entries()[0].user, 0);
        assert_eq!(data.entries()[1].user, 1);
    }

    #[test]
    fn load_handles_duplicates_zeros_header_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(
            &path,
            "user,item,value\na,x,1\na,x,3\nb,y,0\nb,x,2.5\n",
        )
        .unwrap();
        let (data, report) = load_triplets(&path, TripletFormat::Csv, true).unwrap();
        assert_eq!(report.duplicates_replaced, 1);
        assert_eq!(report.zeros_rejected, 1);
        assert_eq!(data.len(), 2);
        // Last occurrence wins for the duplicate.
        assert_eq!(data.entries()[0].value, 3.0);
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "a\tx\t1\nb\ty\tnot-a-number\n").unwrap();
        let err = load_triplets(&path, TripletFormat::Tsv, false).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");

        let empty = dir.path().join("empty.tsv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_triplets(&empty, TripletFormat::Tsv, false).is_err());
    }

    #[test]
    fn triplet_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.tsv");
        let data = toy_dataset(3, 2, &[(0, 0, 1.5), (1, 1, -2.25), (2, 0, 1e-8)]);
        data.save_triplets(&path, TripletFormat::Tsv).unwrap();
        let (back, _) = load_triplets(&path, TripletFormat::Tsv, false).unwrap();
        assert_eq!(back.entries(), data.entries());
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let data = toy_dataset(4, 3, &[(0, 0, 0.125), (3, 2, 7.0)]);
        data.save_cache(&path).unwrap();
        let back = SparseDataset::load_cache(&path).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn dataset_invariants_enforced() {
        let dup = vec![
            Entry { user: 0, item: 0, value: 1.0 },
            Entry { user: 0, item: 0, value: 2.0 },
        ];
        assert!(SparseDataset::from_dense_indices(2, 2, dup).is_err());
        let zero = vec![Entry { user: 0, item: 0, value: 0.0 }];
        assert!(SparseDataset::from_dense_indices(2, 2, zero).is_err());
        let oob = vec![Entry { user: 5, item: 0, value: 1.0 }];
        assert!(SparseDataset::from_dense_indices(2, 2, oob).is_err());
    }

    #[test]
    fn sparsity_definition() {
        let data = toy_dataset(10, 10, &[(0, 0, 1.0), (1, 1, 1.0)]);
        assert!((data.sparsity() - 0.98).abs() < 1e-15);
    }

    fn grid_dataset(c_u: u32, c_i: u32, keep: impl Fn(u32, u32) -> bool) -> SparseDataset {
        let mut entries = Vec::new();
        for u in 0..c_u {
            for i in 0..c_i {
                if keep(u, i) {
                    entries.push(Entry {
                        user: u,
                        item: i,
                        value: (u + i + 1) as f64,
                    });
                }
            }
        }
        SparseDataset::from_dense_indices(c_u as usize, c_i as usize, entries).unwrap()
    }

    #[test]
    fn split_fractions_and_disjointness() {
        let data = grid_dataset(50, 50, |u, i| (u * 7 + i * 3) % 5 != 0);
        let n = data.len();
        let s = split(&data, 0.2, 0.01, 99).unwrap();
        assert_eq!(s.test.nonmissing.len(), ((n as f64) * 0.2).round() as usize);
        assert_eq!(
            s.validation.nonmissing.len(),
            ((n as f64) * 0.01).round() as usize
        );
        assert_eq!(s.test.missing.len(), s.test.nonmissing.len());
        assert_eq!(s.validation.missing.len(), s.validation.nonmissing.len());
        assert_eq!(
            s.train.len() + s.test.nonmissing.len() + s.validation.nonmissing.len(),
            n
        );
        // Pairwise disjoint across all five parts.
        let mut seen = HashSet::new();
        for e in s.train.entries() {
            assert!(seen.insert((e.user, e.item)));
        }
        for e in s.test.nonmissing.iter().chain(&s.validation.nonmissing) {
            assert!(seen.insert((e.user, e.item)));
        }
        for c in s.test.missing.iter().chain(&s.validation.missing) {
            assert!(seen.insert(*c));
        }
        assert_eq!(s.original_entry_count, n);
        assert_eq!(s.total_missing(), 2500 - n as u64);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let data = grid_dataset(40, 40, |u, i| (u + i) % 3 == 0);
        let a = split(&data, 0.2, 0.01, 7).unwrap();
        let b = split(&data, 0.2, 0.01, 7).unwrap();
        assert_eq!(a, b);
        let c = split(&data, 0.2, 0.01, 8).unwrap();
        assert_ne!(a.test.nonmissing, c.test.nonmissing);
    }

    #[test]
    fn split_rejects_dense_grids_and_tiny_data() {
        // Fully dense: no missing cells to sample.
        let data = grid_dataset(10, 10, |_, _| true);
        assert!(split(&data, 0.2, 0.01, 1).is_err());
        let tiny = grid_dataset(3, 3, |u, i| u == 0 && i == 0);
        assert!(split(&tiny, 0.2, 0.01, 1).is_err());
    }

    #[test]
    fn split_set_round_trip() {
        let data = grid_dataset(30, 30, |u, i| (u * 13 + i) % 4 == 0);
        let s = split(&data, 0.2, 0.05, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.bin");
        s.save(&path).unwrap();
        let back = SplitSet::load(&path).unwrap();
        assert_eq!(back, s);
    }
}
