//! Truncated Fourier-Taylor series on the complex domain
//! D(r, s) = { |I| < r } x { |Im theta| < s }.
//!
//! A series stores sparse complex coefficients c[m, k] of monomials
//! I^m exp(i<k, theta>), capped at Taylor degree |m|_1 <= d_max and Fourier
//! band |k|_1 <= k_max. Missing keys are exact zeros. Every series kept here
//! is real-valued on real arguments, which means c[m, -k] = conj(c[m, k])
//! coefficientwise; the constructors enforce it and the arithmetic preserves
//! it (products are re-symmetrized to kill roundoff drift between a mode and
//! its mirror).
//!
//! All smallness arguments run through the weighted coefficient norm
//! `majorant_norm`, an upper bound for the sup of the series on D(r, s).

use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("taylor degree {degree} exceeds cap {cap}")]
    DegreeOverflow { degree: u32, cap: u32 },
    #[error("fourier order {order} exceeds band {cap}")]
    BandOverflow { order: u32, cap: u32 },
    #[error("coefficient at k = 0 must be real, got imaginary part {0:e}")]
    NonRealMean(f64),
    #[error("invalid domain: {0}")]
    BadDomain(String),
    #[error("series decode: {0}")]
    Decode(String),
}

/// Multi-exponent of the action monomial I^m. Ordered lexicographically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ActionDegree(pub Vec<u32>);

impl ActionDegree {
    pub fn zero(n: usize) -> Self {
        ActionDegree(vec![0; n])
    }

    pub fn unit(n: usize, j: usize) -> Self {
        let mut m = vec![0; n];
        m[j] = 1;
        ActionDegree(m)
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }
}

/// Fourier mode index k of exp(i<k, theta>). Ordered lexicographically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct FourierIndex(pub Vec<i32>);

impl FourierIndex {
    pub fn zero(n: usize) -> Self {
        FourierIndex(vec![0; n])
    }

    pub fn l1(&self) -> u32 {
        self.0.iter().map(|k| k.unsigned_abs()).sum()
    }

    pub fn linf(&self) -> u32 {
        self.0.iter().map(|k| k.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }

    pub fn neg(&self) -> Self {
        FourierIndex(self.0.iter().map(|&k| -k).collect())
    }

    /// One representative per mirror pair {k, -k}; k = 0 counts as canonical.
    pub fn is_canonical(&self) -> bool {
        for &k in &self.0 {
            if k > 0 {
                return true;
            }
            if k < 0 {
                return false;
            }
        }
        true
    }
}

/// Analyticity widths of D(r, s), plus the frequency-ball radius h carried
/// along for parameter bookkeeping. The series norm only reads r and s.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DomainSpec {
    pub r: f64,
    pub s: f64,
    pub h: f64,
}

impl DomainSpec {
    pub fn new(r: f64, s: f64, h: f64) -> Result<Self, SeriesError> {
        if !(r > 0.0 && r.is_finite() && s > 0.0 && s.is_finite() && h > 0.0 && h.is_finite()) {
            return Err(SeriesError::BadDomain(format!(
                "widths must be positive and finite, got r={r}, s={s}, h={h}"
            )));
        }
        Ok(DomainSpec { r, s, h })
    }
}

/// Integrable normal form N = e + <omega, I>.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalForm {
    pub e: f64,
    pub omega: Vec<f64>,
}

impl NormalForm {
    pub fn new(e: f64, omega: Vec<f64>) -> Self {
        NormalForm { e, omega }
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn to_series(&self, d_max: u32, k_max: u32) -> FTSeries {
        let n = self.omega.len();
        assert!(d_max >= 1, "normal form is linear in I");
        let mut s = FTSeries::new(n, d_max, k_max);
        s.set_coeff(ActionDegree::zero(n), FourierIndex::zero(n), C64::new(self.e, 0.0)).unwrap();
        for (j, &w) in self.omega.iter().enumerate() {
            s.set_coeff(ActionDegree::unit(n, j), FourierIndex::zero(n), C64::new(w, 0.0)).unwrap();
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FTSeries {
    n: usize,
    d_max: u32,
    k_max: u32,
    coeffs: BTreeMap<(ActionDegree, FourierIndex), C64>,
}

impl FTSeries {
    pub fn new(n: usize, d_max: u32, k_max: u32) -> Self {
        assert!(n > 0, "need at least one degree of freedom");
        FTSeries { n, d_max, k_max, coeffs: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn d_max(&self) -> u32 {
        self.d_max
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Largest |k|_1 actually present (0 for pure Taylor data).
    pub fn support_band(&self) -> u32 {
        self.coeffs.keys().map(|(_, k)| k.l1()).max().unwrap_or(0)
    }

    /// Largest |m|_1 actually present.
    pub fn support_degree(&self) -> u32 {
        self.coeffs.keys().map(|(m, _)| m.total()).max().unwrap_or(0)
    }

    pub fn coeff(&self, m: &ActionDegree, k: &FourierIndex) -> C64 {
        self.coeffs.get(&(m.clone(), k.clone())).copied().unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ActionDegree, &FourierIndex, C64)> {
        self.coeffs.iter().map(|((m, k), &c)| (m, k, c))
    }

    /// Sets c[m, k] and the mirror c[m, -k] = conj(c) in one call, so the
    /// reality invariant can never be broken from outside. A zero removes
    /// both entries. k = 0 requires a real coefficient.
    pub fn set_coeff(
        &mut self,
        m: ActionDegree,
        k: FourierIndex,
        c: C64,
    ) -> Result<(), SeriesError> {
        self.check_key(&m, &k)?;
        if k.is_zero() {
            if c.im != 0.0 {
                return Err(SeriesError::NonRealMean(c.im));
            }
            if c.re == 0.0 {
                self.coeffs.remove(&(m, k));
            } else {
                self.coeffs.insert((m, k), c);
            }
            return Ok(());
        }
        let kn = k.neg();
        if c == C64::new(0.0, 0.0) {
            self.coeffs.remove(&(m.clone(), k));
            self.coeffs.remove(&(m, kn));
        } else {
            self.coeffs.insert((m.clone(), k), c);
            self.coeffs.insert((m, kn), c.conj());
        }
        Ok(())
    }

    fn check_key(&self, m: &ActionDegree, k: &FourierIndex) -> Result<(), SeriesError> {
        if m.0.len() != self.n {
            return Err(SeriesError::DimensionMismatch(m.0.len(), self.n));
        }
        if k.0.len() != self.n {
            return Err(SeriesError::DimensionMismatch(k.0.len(), self.n));
        }
        if m.total() > self.d_max {
            return Err(SeriesError::DegreeOverflow { degree: m.total(), cap: self.d_max });
        }
        if k.l1() > self.k_max {
            return Err(SeriesError::BandOverflow { order: k.l1(), cap: self.k_max });
        }
        Ok(())
    }

    /// amp * I^m * cos<k, theta>
    pub fn cos_mode(n: usize, m: &[u32], k: &[i32], amp: f64) -> Self {
        let md = ActionDegree(m.to_vec());
        let kd = FourierIndex(k.to_vec());
        let mut s = FTSeries::new(n, md.total().max(1), kd.l1().max(1));
        if kd.is_zero() {
            s.set_coeff(md, kd, C64::new(amp, 0.0)).unwrap();
        } else {
            s.set_coeff(md, kd, C64::new(amp / 2.0, 0.0)).unwrap();
        }
        s
    }

    /// amp * I^m * sin<k, theta>
    pub fn sin_mode(n: usize, m: &[u32], k: &[i32], amp: f64) -> Self {
        let md = ActionDegree(m.to_vec());
        let kd = FourierIndex(k.to_vec());
        assert!(!kd.is_zero(), "sin of the zero mode vanishes");
        let mut s = FTSeries::new(n, md.total().max(1), kd.l1());
        // sin x = (e^{ix} - e^{-ix}) / 2i
        s.set_coeff(md, kd, C64::new(0.0, -amp / 2.0)).unwrap();
        s
    }

    pub fn add(&self, other: &FTSeries) -> Result<FTSeries, SeriesError> {
        if self.n != other.n {
            return Err(SeriesError::DimensionMismatch(self.n, other.n));
        }
        let mut out =
            FTSeries::new(self.n, self.d_max.max(other.d_max), self.k_max.max(other.k_max));
        out.coeffs = self.coeffs.clone();
        for ((m, k), &c) in &other.coeffs {
            let slot = out.coeffs.entry((m.clone(), k.clone())).or_insert(C64::new(0.0, 0.0));
            *slot += c;
            if *slot == C64::new(0.0, 0.0) {
                out.coeffs.remove(&(m.clone(), k.clone()));
            }
        }
        Ok(out)
    }

    pub fn scale(&self, a: f64) -> FTSeries {
        let mut out = self.clone();
        if a == 0.0 {
            out.coeffs.clear();
            return out;
        }
        for c in out.coeffs.values_mut() {
            *c *= a;
        }
        out
    }

    /// d/d theta_j: multiplies c[m, k] by i k_j.
    pub fn partial_theta(&self, j: usize) -> FTSeries {
        assert!(j < self.n);
        let mut out = FTSeries::new(self.n, self.d_max, self.k_max);
        for ((m, k), &c) in &self.coeffs {
            let kj = k.0[j];
            if kj == 0 {
                continue;
            }
            out.coeffs.insert((m.clone(), k.clone()), c * C64::new(0.0, kj as f64));
        }
        out
    }

    /// d/d I_j: lowers m_j, multiplies by the old exponent.
    pub fn partial_i(&self, j: usize) -> FTSeries {
        assert!(j < self.n);
        let mut out = FTSeries::new(self.n, self.d_max.saturating_sub(1), self.k_max);
        for ((m, k), &c) in &self.coeffs {
            let mj = m.0[j];
            if mj == 0 {
                continue;
            }
            let mut md = m.clone();
            md.0[j] -= 1;
            out.coeffs.insert((md, k.clone()), c * (mj as f64));
        }
        out
    }

    /// Angle average [.]: keeps the k = 0 modes only.
    pub fn mean(&self) -> FTSeries {
        let mut out = FTSeries::new(self.n, self.d_max, self.k_max);
        for ((m, k), &c) in &self.coeffs {
            if k.is_zero() {
                out.coeffs.insert((m.clone(), k.clone()), c);
            }
        }
        out
    }

    /// Directional derivative along the torus flow: multiplies c[m, k] by
    /// i<k, omega>. Kills all means, and commutes with mean removal.
    pub fn d_omega(&self, omega: &[f64]) -> Result<FTSeries, SeriesError> {
        if omega.len() != self.n {
            return Err(SeriesError::DimensionMismatch(omega.len(), self.n));
        }
        let mut out = FTSeries::new(self.n, self.d_max, self.k_max);
        for ((m, k), &c) in &self.coeffs {
            if k.is_zero() {
                continue;
            }
            let dot: f64 = k.0.iter().zip(omega).map(|(&ki, &w)| ki as f64 * w).sum();
            let v = c * C64::new(0.0, dot);
            if v != C64::new(0.0, 0.0) {
                out.coeffs.insert((m.clone(), k.clone()), v);
            }
        }
        Ok(out)
    }

    /// Splits into (modes with |k|_1 <= band, remainder). Exact.
    pub fn truncate_fourier(&self, band: u32) -> (FTSeries, FTSeries) {
        let mut kept = FTSeries::new(self.n, self.d_max, self.k_max.min(band));
        let mut tail = FTSeries::new(self.n, self.d_max, self.k_max);
        for ((m, k), &c) in &self.coeffs {
            if k.l1() <= band {
                kept.coeffs.insert((m.clone(), k.clone()), c);
            } else {
                tail.coeffs.insert((m.clone(), k.clone()), c);
            }
        }
        (kept, tail)
    }

    /// Splits into (terms with |m|_1 <= degree, remainder). Exact.
    pub fn truncate_taylor(&self, degree: u32) -> (FTSeries, FTSeries) {
        let mut kept = FTSeries::new(self.n, self.d_max.min(degree), self.k_max);
        let mut tail = FTSeries::new(self.n, self.d_max, self.k_max);
        for ((m, k), &c) in &self.coeffs {
            if m.total() <= degree {
                kept.coeffs.insert((m.clone(), k.clone()), c);
            } else {
                tail.coeffs.insert((m.clone(), k.clone()), c);
            }
        }
        (kept, tail)
    }

    /// Weighted coefficient norm sum |c[m,k]| r^|m| e^{|k| s}. Dominates the
    /// sup norm on D(r, s), so every bound derived from it errs safe.
    pub fn majorant_norm(&self, dom: &DomainSpec) -> f64 {
        let mut acc = 0.0;
        for ((m, k), &c) in &self.coeffs {
            acc += c.norm() * dom.r.powi(m.total() as i32) * (k.l1() as f64 * dom.s).exp();
        }
        acc
    }

    pub fn eval(&self, actions: &[C64], angles: &[C64]) -> C64 {
        assert_eq!(actions.len(), self.n);
        assert_eq!(angles.len(), self.n);
        let mut acc = C64::new(0.0, 0.0);
        for ((m, k), &c) in &self.coeffs {
            let mut term = c;
            for (j, &mj) in m.0.iter().enumerate() {
                if mj > 0 {
                    term *= actions[j].powi(mj as i32);
                }
            }
            let mut phase = C64::new(0.0, 0.0);
            for (j, &kj) in k.0.iter().enumerate() {
                phase += C64::new(kj as f64, 0.0) * angles[j];
            }
            term *= (C64::new(0.0, 1.0) * phase).exp();
            acc += term;
        }
        acc
    }

    /// Evaluation at a real phase point; the imaginary part is roundoff by
    /// the reality invariant and is dropped.
    pub fn eval_real(&self, actions: &[f64], angles: &[f64]) -> f64 {
        let ai: Vec<C64> = actions.iter().map(|&x| C64::new(x, 0.0)).collect();
        let th: Vec<C64> = angles.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.eval(&ai, &th).re
    }

    /// Re-averages each mirror pair so c[m,-k] = conj(c[m,k]) holds to the
    /// last bit after accumulation-order dependent roundoff.
    fn symmetrize(&mut self) {
        let keys: Vec<(ActionDegree, FourierIndex)> = self.coeffs.keys().cloned().collect();
        for (m, k) in keys {
            if !k.is_canonical() {
                continue;
            }
            if k.is_zero() {
                if let Some(c) = self.coeffs.get_mut(&(m, k)) {
                    *c = C64::new(c.re, 0.0);
                }
                continue;
            }
            let kn = k.neg();
            let a = self.coeffs.get(&(m.clone(), k.clone())).copied().unwrap_or(C64::new(0.0, 0.0));
            let b =
                self.coeffs.get(&(m.clone(), kn.clone())).copied().unwrap_or(C64::new(0.0, 0.0));
            let avg = (a + b.conj()) * 0.5;
            if avg == C64::new(0.0, 0.0) {
                self.coeffs.remove(&(m.clone(), k));
                self.coeffs.remove(&(m, kn));
            } else {
                self.coeffs.insert((m.clone(), k), avg);
                self.coeffs.insert((m, kn), avg.conj());
            }
        }
    }

    fn drop_zeros(&mut self) {
        self.coeffs.retain(|_, c| *c != C64::new(0.0, 0.0));
    }
}

/// Truncated product. Output keeps |m|_1 <= d_out and |k|_1 <= k_out; the
/// discarded convolution terms are measured on `dom` and returned as the
/// second component.
pub fn multiply(
    a: &FTSeries,
    b: &FTSeries,
    d_out: u32,
    k_out: u32,
    dom: &DomainSpec,
) -> Result<(FTSeries, f64), SeriesError> {
    if a.n != b.n {
        return Err(SeriesError::DimensionMismatch(a.n, b.n));
    }
    let n = a.n;
    let mut out = FTSeries::new(n, d_out, k_out);
    let mut tail_norm = 0.0;
    for ((ma, ka), &ca) in &a.coeffs {
        for ((mb, kb), &cb) in &b.coeffs {
            let c = ca * cb;
            let deg: u32 = ma.total() + mb.total();
            let mut kv = Vec::with_capacity(n);
            let mut kl1: u32 = 0;
            for j in 0..n {
                let kj = ka.0[j] + kb.0[j];
                kl1 += kj.unsigned_abs();
                kv.push(kj);
            }
            if deg > d_out || kl1 > k_out {
                tail_norm += c.norm() * dom.r.powi(deg as i32) * (kl1 as f64 * dom.s).exp();
                continue;
            }
            let mut mv = Vec::with_capacity(n);
            for j in 0..n {
                mv.push(ma.0[j] + mb.0[j]);
            }
            let key = (ActionDegree(mv), FourierIndex(kv));
            *out.coeffs.entry(key).or_insert(C64::new(0.0, 0.0)) += c;
        }
    }
    out.symmetrize();
    out.drop_zeros();
    Ok((out, tail_norm))
}

/// Poisson bracket {a, b} = sum_j a_theta_j b_I_j - a_I_j b_theta_j,
/// truncated like `multiply`; the bracket of affine-in-I inputs is again
/// affine. Returns the discarded-tail norm alongside.
pub fn poisson(
    a: &FTSeries,
    b: &FTSeries,
    d_out: u32,
    k_out: u32,
    dom: &DomainSpec,
) -> Result<(FTSeries, f64), SeriesError> {
    if a.n != b.n {
        return Err(SeriesError::DimensionMismatch(a.n, b.n));
    }
    let n = a.n;
    let mut acc = FTSeries::new(n, d_out, k_out);
    let mut tail = 0.0;
    for j in 0..n {
        let (t1, l1) = multiply(&a.partial_theta(j), &b.partial_i(j), d_out, k_out, dom)?;
        let (t2, l2) = multiply(&a.partial_i(j), &b.partial_theta(j), d_out, k_out, dom)?;
        acc = acc.add(&t1)?.add(&t2.scale(-1.0))?;
        tail += l1 + l2;
    }
    acc.symmetrize();
    acc.drop_zeros();
    Ok((acc, tail))
}

// ---------------------------------------------------------------------------
// serialization: {"n": .., "d_max": .., "K": .., "coeffs": [[[m..],[k..],re,im], ..]}
// with entries in the map's lexicographic key order.

#[derive(Serialize, Deserialize)]
struct SeriesWire {
    n: usize,
    d_max: u32,
    #[serde(rename = "K")]
    k_max: u32,
    coeffs: Vec<(Vec<u32>, Vec<i32>, f64, f64)>,
}

impl Serialize for FTSeries {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let coeffs =
            self.coeffs.iter().map(|((m, k), c)| (m.0.clone(), k.0.clone(), c.re, c.im)).collect();
        SeriesWire { n: self.n, d_max: self.d_max, k_max: self.k_max, coeffs }.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for FTSeries {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let wire = SeriesWire::deserialize(de)?;
        if wire.n == 0 {
            return Err(D::Error::custom("series decode: n must be positive"));
        }
        let mut out = FTSeries::new(wire.n, wire.d_max, wire.k_max);
        for (mv, kv, re, im) in wire.coeffs {
            let m = ActionDegree(mv);
            let k = FourierIndex(kv);
            out.check_key(&m, &k).map_err(|e| D::Error::custom(e.to_string()))?;
            let c = C64::new(re, im);
            if out.coeffs.insert((m, k), c).is_some() {
                return Err(D::Error::custom("series decode: duplicate coefficient key"));
            }
        }
        // reality symmetry is part of the format, not a repair step
        for ((m, k), c) in &out.coeffs {
            if k.is_zero() {
                if c.im != 0.0 {
                    return Err(D::Error::custom("series decode: k = 0 coefficient not real"));
                }
                continue;
            }
            let mirror = out.coeffs.get(&(m.clone(), k.neg()));
            if mirror != Some(&c.conj()) {
                return Err(D::Error::custom(format!(
                    "series decode: missing or inconsistent mirror of mode {:?}",
                    k.0
                )));
            }
        }
        out.drop_zeros();
        Ok(out)
    }
}
