//! Binary observation matrices, semantic embedding tables, and hold-out masks,
//! together with their on-disk text formats.
//!
//! The observation matrix is stored as a sparse coordinate list (the regimes of
//! interest are 77-90% zeros) with a packed bit grid for O(1) entry lookup.
//! All types are immutable after construction and safe to share across threads.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{KelpError, Result};
use crate::textio::{fmt_f64, read_file, write_file};

/// RNG stream id for hold-out mask sampling, distinct from the simulation streams.
const STREAM_MASK: u64 = 0x6d61_736b;

/// Packed row-major bit lookup shared by `BinaryMatrix` and `EntryMask`.
#[derive(Debug, Clone, PartialEq)]
struct BitGrid {
    n: usize,
    p: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitGrid {
    fn new(n: usize, p: usize) -> Self {
        let words_per_row = p.div_ceil(64);
        BitGrid {
            n,
            p,
            words_per_row,
            words: vec![0; n * words_per_row],
        }
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize) {
        self.words[i * self.words_per_row + j / 64] |= 1u64 << (j % 64);
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.n && j < self.p);
        (self.words[i * self.words_per_row + j / 64] >> (j % 64)) & 1 == 1
    }

    #[inline]
    fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }
}

/// Validate, sort, and reject duplicates in a coordinate list.
fn normalize_coords(
    n: usize,
    p: usize,
    mut coords: Vec<(usize, usize)>,
    what: &str,
) -> Result<Vec<(usize, usize)>> {
    for &(i, j) in &coords {
        if i >= n || j >= p {
            return Err(KelpError::InvalidArgument(format!(
                "{what} index ({i}, {j}) out of range for {n}x{p}"
            )));
        }
    }
    coords.sort_unstable();
    if let Some(w) = coords.windows(2).find(|w| w[0] == w[1]) {
        return Err(KelpError::InvalidArgument(format!(
            "duplicate {what} pair ({}, {})",
            w[0].0, w[0].1
        )));
    }
    Ok(coords)
}

/// Parse a coordinate-list file: header line `n p`, then one `i j` line per entry.
fn parse_coord_file(path: &Path) -> Result<(usize, usize, Vec<(usize, usize)>)> {
    let content = read_file(path)?;
    let mut lines = content.lines().enumerate();
    let (hline_no, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| KelpError::parse(path, 1, "malformed header: empty file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(KelpError::parse(
            path,
            hline_no + 1,
            format!("malformed header: expected `n p`, found `{}`", header.trim()),
        ));
    }
    let n: usize = toks[0].parse().map_err(|_| {
        KelpError::parse(path, hline_no + 1, format!("non-integer token `{}`", toks[0]))
    })?;
    let p: usize = toks[1].parse().map_err(|_| {
        KelpError::parse(path, hline_no + 1, format!("non-integer token `{}`", toks[1]))
    })?;
    let mut coords = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(KelpError::parse(
                path,
                line_no + 1,
                format!("expected `i j`, found `{}`", line.trim()),
            ));
        }
        let i: usize = toks[0].parse().map_err(|_| {
            KelpError::parse(path, line_no + 1, format!("non-integer token `{}`", toks[0]))
        })?;
        let j: usize = toks[1].parse().map_err(|_| {
            KelpError::parse(path, line_no + 1, format!("non-integer token `{}`", toks[1]))
        })?;
        coords.push((i, j));
    }
    Ok((n, p, coords))
}

fn coord_file_content(n: usize, p: usize, coords: &[(usize, usize)]) -> String {
    let mut out = String::with_capacity(8 + coords.len() * 12);
    let _ = writeln!(out, "{n} {p}");
    for &(i, j) in coords {
        let _ = writeln!(out, "{i} {j}");
    }
    out
}

/// An n x p binary observation matrix stored as the set of one-entries.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMatrix {
    n: usize,
    p: usize,
    ones: Vec<(usize, usize)>,
    bits: BitGrid,
}

impl BinaryMatrix {
    /// Build from dimensions and the (0-based) coordinates of the one-entries.
    /// Coordinates are sorted; out-of-range and duplicate pairs are rejected.
    pub fn new(n: usize, p: usize, ones: Vec<(usize, usize)>) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(KelpError::InvalidArgument(format!(
                "matrix dimensions must be positive, got {n}x{p}"
            )));
        }
        let ones = normalize_coords(n, p, ones, "matrix")?;
        let mut bits = BitGrid::new(n, p);
        for &(i, j) in &ones {
            bits.set(i, j);
        }
        Ok(BinaryMatrix { n, p, ones, bits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Sorted coordinates of the one-entries.
    pub fn ones(&self) -> &[(usize, usize)] {
        &self.ones
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits.get(i, j)
    }

    /// Packed bits of row `i`, 64 entries per word, low bit first.
    #[inline]
    pub(crate) fn row_words(&self, i: usize) -> &[u64] {
        self.bits.row(i)
    }

    pub fn count_ones(&self) -> usize {
        self.ones.len()
    }

    pub fn one_fraction(&self) -> f64 {
        self.ones.len() as f64 / (self.n * self.p) as f64
    }

    /// Dense 0/1 copy.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.p));
        for &(i, j) in &self.ones {
            out[[i, j]] = 1.0;
        }
        out
    }

    /// Copy with all entries covered by `mask` forced to zero.
    pub fn without_entries(&self, mask: &EntryMask) -> Result<Self> {
        if mask.dims() != (self.n, self.p) {
            return Err(KelpError::DimensionMismatch(format!(
                "mask dims {:?} do not match matrix {}x{}",
                mask.dims(),
                self.n,
                self.p
            )));
        }
        let ones = self
            .ones
            .iter()
            .copied()
            .filter(|&(i, j)| !mask.contains(i, j))
            .collect();
        BinaryMatrix::new(self.n, self.p, ones)
    }

    /// Load from the coordinate-list text format: header `n p`, one `i j` line
    /// per one-entry, 0-based.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (n, p, coords) = parse_coord_file(path)?;
        BinaryMatrix::new(n, p, coords)
            .map_err(|e| KelpError::parse(path, 1, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(
            path.as_ref(),
            &coord_file_content(self.n, self.p, &self.ones),
        )
    }
}

/// The p x d table of external semantic embeddings (row j is e_j).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(KelpError::InvalidArgument(
                "embedding table must have at least one row and one column".into(),
            ));
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(KelpError::InvalidArgument(
                "embedding table contains a non-finite entry".into(),
            ));
        }
        Ok(EmbeddingTable { rows })
    }

    pub fn p(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.rows.row(j)
    }

    /// Load from comma-separated numeric rows of equal length.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = read_file(path)?;
        let mut data: Vec<f64> = Vec::new();
        let mut d: Option<usize> = None;
        let mut p = 0;
        for (line_no, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut count = 0;
            for tok in line.split(',') {
                let tok = tok.trim();
                let x: f64 = tok.parse().map_err(|_| {
                    KelpError::parse(path, line_no + 1, format!("non-numeric token `{tok}`"))
                })?;
                data.push(x);
                count += 1;
            }
            match d {
                None => d = Some(count),
                Some(d0) if d0 != count => {
                    return Err(KelpError::parse(
                        path,
                        line_no + 1,
                        format!("ragged rows: expected {d0} values, found {count}"),
                    ))
                }
                _ => {}
            }
            p += 1;
        }
        let d = d.ok_or_else(|| KelpError::parse(path, 1, "empty embedding file"))?;
        let rows = Array2::from_shape_vec((p, d), data)
            .expect("row-major data matches dimensions");
        EmbeddingTable::new(rows).map_err(|e| KelpError::parse(path, 1, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for row in self.rows.rows() {
            let mut line = String::new();
            for (k, x) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&fmt_f64(*x));
            }
            let _ = writeln!(out, "{line}");
        }
        write_file(path.as_ref(), &out)
    }
}

/// A set of held-out entries of an n x p matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryMask {
    n: usize,
    p: usize,
    held_out: Vec<(usize, usize)>,
    bits: BitGrid,
}

impl EntryMask {
    pub fn new(n: usize, p: usize, held_out: Vec<(usize, usize)>) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(KelpError::InvalidArgument(format!(
                "mask dimensions must be positive, got {n}x{p}"
            )));
        }
        let held_out = normalize_coords(n, p, held_out, "mask")?;
        let mut bits = BitGrid::new(n, p);
        for &(i, j) in &held_out {
            bits.set(i, j);
        }
        Ok(EntryMask {
            n,
            p,
            held_out,
            bits,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    pub fn held_out(&self) -> &[(usize, usize)] {
        &self.held_out
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.bits.get(i, j)
    }

    #[inline]
    pub(crate) fn row_words(&self, i: usize) -> &[u64] {
        self.bits.row(i)
    }

    pub fn len(&self) -> usize {
        self.held_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.held_out.is_empty()
    }

    /// Same coordinate-list format as the matrix file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (n, p, coords) = parse_coord_file(path)?;
        EntryMask::new(n, p, coords).map_err(|e| KelpError::parse(path, 1, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(
            path.as_ref(),
            &coord_file_content(self.n, self.p, &self.held_out),
        )
    }
}

/// Sample a hold-out mask: each entry is included independently with
/// probability `pi`, driven by a deterministic seeded generator.
pub fn sample_holdout_mask(n: usize, p: usize, pi: f64, seed: u64) -> Result<EntryMask> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(KelpError::InvalidArgument(format!(
            "hold-out probability must lie in (0, 1), got {pi}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_MASK);
    let mut held_out = Vec::new();
    for i in 0..n {
        for j in 0..p {
            if rng.random::<f64>() < pi {
                held_out.push((i, j));
            }
        }
    }
    EntryMask::new(n, p, held_out)
}

/// Grand-mean / row-mean helpers used in a few places.
pub(crate) fn mean(v: ArrayView1<'_, f64>) -> f64 {
    v.sum() / v.len() as f64
}

pub(crate) fn centered(v: &Array1<f64>) -> Array1<f64> {
    let m = mean(v.view());
    v - m
}
