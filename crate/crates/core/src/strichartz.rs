//! Chen–Strichartz representation `y_t = [exp(Z_t)](a)` for nilpotent
//! families: permutation coefficients, the `ψ` functionals of the signature,
//! assembly of `Z_t` and its time-one flow.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fbm::SamplePath;
use crate::liefields::{bracket_levels, fields_hash, is_nilpotent, FloatField, PolyVectorField};
use crate::signature::{path_signature, IteratedIntegrals, Word};

/// Default number of RK4 steps for the exponential flow.
pub const DEFAULT_FLOW_STEPS: usize = 256;

/// Largest word length for which permutations are enumerated.
pub const MAX_PSI_LEVEL: usize = 6;

fn check_permutation(sigma: &[usize]) -> Result<()> {
    let k = sigma.len();
    let mut seen = vec![false; k];
    for &s in sigma {
        if s == 0 || s > k || seen[s - 1] {
            return domain(format!("{sigma:?} is not a permutation of 1..={k}"));
        }
        seen[s - 1] = true;
    }
    Ok(())
}

/// Number of descents `#{j : σ(j) > σ(j+1)}` of a permutation of `1..=k`.
pub fn descent_count(sigma: &[usize]) -> Result<usize> {
    check_permutation(sigma)?;
    Ok(sigma.windows(2).filter(|w| w[0] > w[1]).count())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(-1)^{e(σ)} / (k² · C(k-1, e(σ)))`.
pub fn permutation_coefficient(sigma: &[usize]) -> Result<f64> {
    let e = descent_count(sigma)?;
    let k = sigma.len();
    let sign = if e % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign / ((k * k) as f64 * binomial(k - 1, e)))
}

/// For each `σ ∈ S_k`: its coefficient and `τ = σ⁻¹` (0-based).
fn permutation_table(k: usize) -> Vec<(f64, Vec<usize>)> {
    (1..=k)
        .permutations(k)
        .map(|sigma| {
            let coef = permutation_coefficient(&sigma).expect("generated permutation");
            let mut tau = vec![0; k];
            for (pos, &s) in sigma.iter().enumerate() {
                tau[s - 1] = pos;
            }
            (coef, tau)
        })
        .collect()
}

/// `ψ^{i_1…i_k} = Σ_σ coef(σ) · value((i_{τ(1)}, …, i_{τ(k)}))` for an
/// arbitrary functional `value` of words.
pub fn psi_with(word: &Word, value: impl Fn(&Word) -> f64) -> Result<f64> {
    let k = word.len();
    if k == 0 || k > MAX_PSI_LEVEL {
        return domain(format!("psi needs a word of length 1..={MAX_PSI_LEVEL}, got {k}"));
    }
    Ok(psi_with_table(word, &permutation_table(k), &value))
}

fn psi_with_table(word: &Word, table: &[(f64, Vec<usize>)], value: &impl Fn(&Word) -> f64) -> f64 {
    let letters = word.letters();
    let mut permuted = vec![0; letters.len()];
    table
        .iter()
        .map(|(coef, tau)| {
            for (slot, &t) in permuted.iter_mut().zip(tau) {
                *slot = letters[t];
            }
            coef * value(&Word::new(permuted.clone()))
        })
        .sum()
}

/// `ψ_t^w` from the signature over `[0, t]`.
pub fn psi(sig: &IteratedIntegrals, word: &Word) -> Result<f64> {
    if word.len() > sig.level() {
        return domain(format!(
            "word of length {} exceeds signature level {}",
            word.len(),
            sig.level()
        ));
    }
    if let Some(&l) = word.letters().iter().find(|&&l| l >= sig.dim()) {
        return domain(format!("letter {} out of range for dimension {}", l + 1, sig.dim()));
    }
    psi_with(word, |w| sig.get(w))
}

/// All `ψ` values up to a level, stored like signature levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiTable {
    pub t: f64,
    pub dim: usize,
    pub levels: Vec<Vec<f64>>,
}

impl PsiTable {
    pub fn get(&self, word: &Word) -> f64 {
        self.levels[word.len() - 1][word.index(self.dim)]
    }
}

/// The time-frozen vector field `Z_t` with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub z: FloatField,
    pub t: f64,
    pub fields_hash: String,
}

/// Brackets of a nilpotent family, compiled once and reused for every driver.
#[derive(Debug, Clone)]
pub struct StrichartzSystem {
    fields: Vec<PolyVectorField>,
    n: usize,
    dim: usize,
    d: usize,
    hash: String,
    /// `brackets[k-1][word index]` for word lengths `1..n`.
    brackets: Vec<Vec<FloatField>>,
    tables: Vec<Vec<(f64, Vec<usize>)>>,
}

impl StrichartzSystem {
    /// Verify that brackets of length `n` vanish, then compile the shorter ones.
    pub fn new(fields: &[PolyVectorField], n: usize) -> Result<Self> {
        let (ok, witness) = is_nilpotent(fields, n)?;
        if !ok {
            return Err(Error::Precondition(format!(
                "fields are not nilpotent of order {n}: bracket {} is non-zero",
                witness.expect("witness accompanies failure")
            )));
        }
        Self::new_unchecked(fields, n)
    }

    /// Skip the nilpotency check; the series is then truncated at length `n-1`.
    pub fn new_unchecked(fields: &[PolyVectorField], n: usize) -> Result<Self> {
        if n < 2 || n - 1 > MAX_PSI_LEVEL {
            return domain(format!("nilpotency order must lie in 2..={}, got {n}", MAX_PSI_LEVEL + 1));
        }
        let levels = bracket_levels(fields, n - 1)?;
        let brackets = levels
            .iter()
            .map(|lvl| lvl.iter().map(PolyVectorField::compile).collect())
            .collect();
        Ok(Self {
            fields: fields.to_vec(),
            n,
            dim: fields[0].dim(),
            d: fields.len(),
            hash: fields_hash(fields),
            brackets,
            tables: (1..n).map(permutation_table).collect(),
        })
    }

    pub fn fields(&self) -> &[PolyVectorField] {
        &self.fields
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// State dimension `m`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of fields `d`.
    pub fn n_fields(&self) -> usize {
        self.d
    }

    pub fn fields_hash(&self) -> &str {
        &self.hash
    }

    /// Compiled bracket `V_w` for a word of length `< n`.
    pub fn bracket(&self, word: &Word) -> &FloatField {
        &self.brackets[word.len() - 1][word.index(self.d)]
    }

    /// `ψ` for every word of length `1..n` from a functional of words.
    pub fn psi_levels(&self, value: impl Fn(&Word) -> f64) -> Vec<Vec<f64>> {
        (1..self.n)
            .map(|k| {
                let table = &self.tables[k - 1];
                let skip = &self.brackets[k - 1];
                Word::all(k, self.d)
                    .enumerate()
                    .map(|(i, w)| {
                        // ψ is only needed where the bracket is non-zero.
                        if skip[i].is_zero() {
                            0.0
                        } else {
                            psi_with_table(&w, table, &value)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn psi_table(&self, sig: &IteratedIntegrals) -> Result<PsiTable> {
        self.check_sig(sig)?;
        Ok(PsiTable {
            t: sig.interval().1,
            dim: self.d,
            levels: self.psi_levels(|w| sig.get(w)),
        })
    }

    /// `Σ_w ψ^w V_w` for given `ψ` levels.
    pub fn assemble(&self, psi: &[Vec<f64>]) -> FloatField {
        let parts = psi
            .iter()
            .zip(&self.brackets)
            .flat_map(|(p, b)| p.iter().copied().zip(b.iter()));
        FloatField::linear_combination(self.dim, parts)
    }

    fn check_sig(&self, sig: &IteratedIntegrals) -> Result<()> {
        if sig.level() < self.n - 1 {
            return domain(format!(
                "signature level {} is below the required {}",
                sig.level(),
                self.n - 1
            ));
        }
        if sig.dim() != self.d {
            return domain(format!("signature of a {}-dimensional path for {} fields", sig.dim(), self.d));
        }
        Ok(())
    }

    pub fn build_z(&self, sig: &IteratedIntegrals) -> Result<FlowField> {
        let table = self.psi_table(sig)?;
        Ok(FlowField {
            z: self.assemble(&table.levels),
            t: table.t,
            fields_hash: self.hash.clone(),
        })
    }

    /// `[exp(Z_t)](a)` with `Z_t` built from the path signature over `[0, t]`.
    pub fn solve(&self, p: &SamplePath, a: &[f64], t: f64, steps: usize) -> Result<Vec<f64>> {
        if a.len() != self.dim {
            return domain(format!("initial condition has dimension {}, fields live in {}", a.len(), self.dim));
        }
        if t == 0.0 {
            p.grid().index_of(t)?;
            return Ok(a.to_vec());
        }
        let sig = path_signature(p, 0.0, t, self.n - 1)?;
        exp_flow(&self.build_z(&sig)?, a, steps)
    }
}

/// `Z = Σ_{k<n} Σ_{|w|=k} V_w ψ^w`. Fails with a precondition error unless the
/// brackets of length `n` vanish.
pub fn build_z(fields: &[PolyVectorField], sig: &IteratedIntegrals, n: usize) -> Result<FlowField> {
    StrichartzSystem::new(fields, n)?.build_z(sig)
}

/// Same as [`build_z`] without the nilpotency check.
pub fn build_z_unchecked(fields: &[PolyVectorField], sig: &IteratedIntegrals, n: usize) -> Result<FlowField> {
    StrichartzSystem::new_unchecked(fields, n)?.build_z(sig)
}

/// One classical RK4 step of `x' = f(x)` with step `h`.
pub(crate) fn rk4_step(f: &FloatField, x: &mut [f64], h: f64, scratch: &mut [Vec<f64>; 4], tmp: &mut [f64]) {
    let m = x.len();
    f.eval_into(x, &mut scratch[0]);
    for i in 0..m {
        tmp[i] = x[i] + 0.5 * h * scratch[0][i];
    }
    f.eval_into(tmp, &mut scratch[1]);
    for i in 0..m {
        tmp[i] = x[i] + 0.5 * h * scratch[1][i];
    }
    f.eval_into(tmp, &mut scratch[2]);
    for i in 0..m {
        tmp[i] = x[i] + h * scratch[2][i];
    }
    f.eval_into(tmp, &mut scratch[3]);
    for i in 0..m {
        x[i] += h / 6.0 * (scratch[0][i] + 2.0 * scratch[1][i] + 2.0 * scratch[2][i] + scratch[3][i]);
    }
}

/// Time-one map of `Ψ' = Z(Ψ)`, `Ψ_0 = a`, by fixed-step RK4.
pub fn exp_flow(z: &FlowField, a: &[f64], steps: usize) -> Result<Vec<f64>> {
    exp_flow_field(&z.z, a, steps)
}

pub fn exp_flow_field(z: &FloatField, a: &[f64], steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return domain("exp_flow needs at least one step");
    }
    if a.len() != z.dim() {
        return domain(format!("initial point has dimension {}, field lives in {}", a.len(), z.dim()));
    }
    let m = a.len();
    let mut x = a.to_vec();
    if z.is_zero() {
        return Ok(x);
    }
    let h = 1.0 / steps as f64;
    let mut scratch = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    let mut tmp = vec![0.0; m];
    for k in 0..steps {
        rk4_step(z, &mut x, h, &mut scratch, &mut tmp);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                time: (k + 1) as f64 * h,
            });
        }
    }
    Ok(x)
}

/// `y_t = [exp(Z_t)](a)` for a nilpotent family of order `n`.
pub fn strichartz_solve(
    fields: &[PolyVectorField],
    p: &SamplePath,
    a: &[f64],
    t: f64,
    n: usize,
) -> Result<Vec<f64>> {
    StrichartzSystem::new(fields, n)?.solve(p, a, t, DEFAULT_FLOW_STEPS)
}
