//! Truncated signatures of piecewise-linear paths.
//!
//! Level `k` of an [`IteratedIntegrals`] table is stored densely as `d^k`
//! reals indexed by words in base `d` (first letter most significant).
//! Letters are 0-based in memory and 1-based in every text format.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::fbm::SamplePath;

/// Default truncation level of path signatures.
pub const DEFAULT_LEVEL: usize = 4;

/// A word over the alphabet `{0, .., d-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Word(pub Vec<usize>);

impl Word {
    pub fn new(letters: Vec<usize>) -> Self {
        Self(letters)
    }

    /// Parse a 1-based word such as `"1,2,2"`.
    pub fn parse_one_based(text: &str) -> Result<Self> {
        let mut letters = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let k: usize = part
                .parse()
                .map_err(|_| crate::Error::Domain(format!("bad letter {part:?} in word")))?;
            if k == 0 {
                return domain("word letters are 1-based");
            }
            letters.push(k - 1);
        }
        if letters.is_empty() {
            return domain("empty word");
        }
        Ok(Self(letters))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|l| l + 1).collect()
    }

    /// Dense index within its level.
    pub fn index(&self, d: usize) -> usize {
        self.0.iter().fold(0, |acc, &l| acc * d + l)
    }

    pub fn from_index(mut idx: usize, len: usize, d: usize) -> Self {
        let mut letters = vec![0; len];
        for slot in letters.iter_mut().rev() {
            *slot = idx % d;
            idx /= d;
        }
        Self(letters)
    }

    /// All words of length `len` in lexicographic order.
    pub fn all(len: usize, d: usize) -> impl Iterator<Item = Word> {
        (0..d.pow(len as u32)).map(move |i| Word::from_index(i, len, d))
    }
}

impl std::fmt::Display for Word {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(|l| l.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Truncated signature `B^k_{st}` for `k = 0..=level` over an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IteratedIntegrals {
    start: f64,
    end: f64,
    dim: usize,
    levels: Vec<Vec<f64>>,
}

impl IteratedIntegrals {
    /// Signature of the constant path: 1 at level 0, zero elsewhere.
    pub fn identity(dim: usize, level: usize, start: f64, end: f64) -> Self {
        let levels = (0..=level)
            .map(|k| {
                let mut v = vec![0.0; dim.pow(k as u32)];
                if k == 0 {
                    v[0] = 1.0;
                }
                v
            })
            .collect();
        Self {
            start,
            end,
            dim,
            levels,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    /// Dense entries of level `k`.
    pub fn level_values(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn get(&self, word: &Word) -> f64 {
        self.levels[word.len()][word.index(self.dim)]
    }

    /// Entry for a word, or a domain error when the word is longer than the
    /// truncation level or uses letters outside the alphabet.
    pub fn try_get(&self, word: &Word) -> Result<f64> {
        if word.len() > self.level() {
            return domain(format!(
                "word {word} is longer than the truncation level {}",
                self.level()
            ));
        }
        if word.letters().iter().any(|&l| l >= self.dim) {
            return domain(format!("word {word} leaves the alphabet of size {}", self.dim));
        }
        Ok(self.get(word))
    }

    /// Level-1 entries, i.e. the path increment.
    pub fn increment(&self) -> &[f64] {
        &self.levels[1]
    }

    /// Level-2 entries as a `d × d` matrix (`(i, j)` is `∫ dB^i dB^j`).
    pub fn level2_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.levels[2])
    }

    /// Copy truncated to a lower level.
    pub fn truncate(&self, level: usize) -> Self {
        let mut out = self.clone();
        out.levels.truncate(level + 1);
        out
    }

    pub fn max_abs_diff(&self, other: &IteratedIntegrals) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> SignatureJson {
        let mut entries = Vec::new();
        for k in 1..=self.level() {
            for (i, &v) in self.levels[k].iter().enumerate() {
                entries.push(SignatureEntry {
                    word: Word::from_index(i, k, self.dim).one_based(),
                    value: v,
                });
            }
        }
        SignatureJson {
            interval: [self.start, self.end],
            level: self.level(),
            entries,
        }
    }

    /// Multiply level `k` by `c^k`, i.e. the signature of the path scaled by `c`.
    pub fn dilate(&self, c: f64) -> Self {
        let mut out = self.clone();
        for (k, lvl) in out.levels.iter_mut().enumerate() {
            let f = c.powi(k as i32);
            lvl.iter_mut().for_each(|v| *v *= f);
        }
        out
    }
}

/// JSON dump `{interval, level, entries: [{word, value}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureJson {
    pub interval: [f64; 2],
    pub level: usize,
    pub entries: Vec<SignatureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureEntry {
    pub word: Vec<usize>,
    pub value: f64,
}

/// Signature of a straight segment with increment `v`: the tensor exponential,
/// `B^{w} = ∏ v_{w_j} / k!`.
pub fn segment_signature(v: &[f64], level: usize) -> Result<IteratedIntegrals> {
    segment_signature_on(v, level, 0.0, 1.0)
}

pub fn segment_signature_on(v: &[f64], level: usize, start: f64, end: f64) -> Result<IteratedIntegrals> {
    if level < 1 {
        return domain("signature level must be at least 1");
    }
    let d = v.len();
    if d == 0 {
        return domain("segment increment must be non-empty");
    }
    let mut levels = Vec::with_capacity(level + 1);
    levels.push(vec![1.0]);
    for k in 1..=level {
        let prev: &Vec<f64> = &levels[k - 1];
        let mut cur = Vec::with_capacity(prev.len() * d);
        for &p in prev {
            for &x in v {
                cur.push(p * x / k as f64);
            }
        }
        levels.push(cur);
    }
    Ok(IteratedIntegrals {
        start,
        end,
        dim: d,
        levels,
    })
}

/// Chen product of signatures over adjacent intervals `[s,u]` and `[u,t]`.
pub fn chen_concat(a: &IteratedIntegrals, b: &IteratedIntegrals) -> Result<IteratedIntegrals> {
    if a.dim != b.dim || a.level() != b.level() {
        return domain("signatures differ in dimension or level");
    }
    let scale = a.end.abs().max(b.start.abs()).max(1.0);
    if (a.end - b.start).abs() > 1e-12 * scale {
        return domain(format!(
            "intervals [{}, {}] and [{}, {}] do not meet",
            a.start, a.end, b.start, b.end
        ));
    }
    Ok(chen_product(a, b, a.start, b.end))
}

fn chen_product(a: &IteratedIntegrals, b: &IteratedIntegrals, start: f64, end: f64) -> IteratedIntegrals {
    let d = a.dim;
    let level = a.level();
    let mut levels = Vec::with_capacity(level + 1);
    for k in 0..=level {
        let mut cur = vec![0.0; d.pow(k as u32)];
        for j in 0..=k {
            let suffix_size = d.pow((k - j) as u32);
            let (la, lb) = (&a.levels[j], &b.levels[k - j]);
            for (pi, &pa) in la.iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                let base = pi * suffix_size;
                for (si, &sb) in lb.iter().enumerate() {
                    cur[base + si] += pa * sb;
                }
            }
        }
        levels.push(cur);
    }
    IteratedIntegrals {
        start,
        end,
        dim: d,
        levels,
    }
}

/// Signature of the piecewise-linear interpolant between grid indices `s < t`.
pub fn path_signature_idx(p: &SamplePath, s: usize, t: usize, level: usize) -> Result<IteratedIntegrals> {
    if s >= t || t >= p.len() {
        return domain(format!("need grid indices s < t < {}, got ({s}, {t})", p.len()));
    }
    let times = p.grid().times();
    fold_segments(p, s, t, level, times)
}

fn fold_segments(p: &SamplePath, s: usize, t: usize, level: usize, times: &[f64]) -> Result<IteratedIntegrals> {
    if t - s == 1 {
        return segment_signature_on(&p.increment(s, t), level, times[s], times[t]);
    }
    // Halving keeps the fold associative-balanced; Chen makes it exact.
    let m = (s + t) / 2;
    let left = fold_segments(p, s, m, level, times)?;
    let right = fold_segments(p, m, t, level, times)?;
    Ok(chen_product(&left, &right, times[s], times[t]))
}

/// Signature over `[s, t]` for grid times `s < t`.
pub fn path_signature(p: &SamplePath, s: f64, t: f64, level: usize) -> Result<IteratedIntegrals> {
    let (i, j) = (p.grid().index_of(s)?, p.grid().index_of(t)?);
    path_signature_idx(p, i, j, level)
}

/// Signatures `S(0, t_k)` for every grid index `k` (entry 0 is the identity).
pub fn running_signatures(p: &SamplePath, level: usize) -> Result<Vec<IteratedIntegrals>> {
    let times = p.grid().times();
    let mut out = Vec::with_capacity(p.len());
    out.push(IteratedIntegrals::identity(p.dim(), level, 0.0, 0.0));
    for k in 1..p.len() {
        let seg = segment_signature_on(&p.increment(k - 1, k), level, times[k - 1], times[k])?;
        let next = chen_product(&out[k - 1], &seg, 0.0, times[k]);
        out.push(next);
    }
    Ok(out)
}

/// Lévy area matrix `B²_{st}` (`(i,j)` entry `∫_s^t B¹,ⁱ_{su} dB^j_u`).
pub fn levy_area(p: &SamplePath, s: f64, t: f64) -> Result<DMatrix<f64>> {
    Ok(path_signature(p, s, t, 2)?.level2_matrix())
}

pub fn levy_area_idx(p: &SamplePath, s: usize, t: usize) -> Result<DMatrix<f64>> {
    Ok(path_signature_idx(p, s, t, 2)?.level2_matrix())
}

/// Largest `|δB²_{sut} - B¹_{su} ⊗ B¹_{ut}|` over all grid triples.
pub fn chen_defect_level2(p: &SamplePath) -> Result<f64> {
    let n = p.len();
    let d = p.dim();
    // All-pairs level-2 table, extending each row one segment at a time.
    let mut table: Vec<Vec<IteratedIntegrals>> = Vec::with_capacity(n);
    for s in 0..n {
        let mut row = Vec::with_capacity(n - s);
        row.push(IteratedIntegrals::identity(d, 2, p.grid().time(s), p.grid().time(s)));
        for t in s + 1..n {
            let seg = segment_signature_on(&p.increment(t - 1, t), 2, p.grid().time(t - 1), p.grid().time(t))?;
            let next = chen_product(&row[t - 1 - s], &seg, p.grid().time(s), p.grid().time(t));
            row.push(next);
        }
        table.push(row);
    }
    let mut worst: f64 = 0.0;
    for s in 0..n {
        for u in s..n {
            for t in u..n {
                let (st, su, ut) = (&table[s][t - s], &table[s][u - s], &table[u][t - u]);
                for i in 0..d {
                    for j in 0..d {
                        let k = i * d + j;
                        let delta = st.levels[2][k] - su.levels[2][k] - ut.levels[2][k];
                        let cross = su.levels[1][i] * ut.levels[1][j];
                        worst = worst.max((delta - cross).abs());
                    }
                }
            }
        }
    }
    Ok(worst)
}
