//! Storage for the first- and second-order normal-ordered moments.
//!
//! All moments live in one flat complex buffer so that drift and diffusion
//! updates are plain axpy loops. Pair blocks that are Hermitian or symmetric
//! (`sp`, `sm`, `zz`) are stored as packed upper triangles (`j <= i`); the
//! accessors materialize the partner entries. `sz` has no such symmetry and
//! is stored as a full `K x K` block.

use num_complex::Complex64 as C64;
use serde::{Serialize, Serializer};

/// Offsets of each moment block inside the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    k: usize,
    s: usize,
    z: usize,
    as_p: usize,
    as_m: usize,
    as_z: usize,
    sp: usize,
    sm: usize,
    zz: usize,
    sz: usize,
    len: usize,
}

pub(crate) const IDX_A: usize = 0;
pub(crate) const IDX_N: usize = 1;
pub(crate) const IDX_AA: usize = 2;

#[inline]
fn tri(j: usize, i: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

impl Layout {
    pub fn new(k: usize) -> Self {
        let packed = k * (k + 1) / 2;
        let s = 3;
        let z = s + k;
        let as_p = z + k;
        let as_m = as_p + k;
        let as_z = as_m + k;
        let sp = as_z + k;
        let sm = sp + packed;
        let zz = sm + packed;
        let sz = zz + packed;
        let len = sz + k * k;
        Layout {
            k,
            s,
            z,
            as_p,
            as_m,
            as_z,
            sp,
            sm,
            zz,
            sz,
            len,
        }
    }

    pub fn ensembles(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub(crate) fn s(&self, i: usize) -> usize {
        self.s + i
    }
    #[inline]
    pub(crate) fn z(&self, i: usize) -> usize {
        self.z + i
    }
    #[inline]
    pub(crate) fn as_p(&self, i: usize) -> usize {
        self.as_p + i
    }
    #[inline]
    pub(crate) fn as_m(&self, i: usize) -> usize {
        self.as_m + i
    }
    #[inline]
    pub(crate) fn as_z(&self, i: usize) -> usize {
        self.as_z + i
    }
    /// Packed slot for an ordered pair; callers must pass `j <= i`.
    #[inline]
    pub(crate) fn sp(&self, j: usize, i: usize) -> usize {
        self.sp + tri(j, i)
    }
    #[inline]
    pub(crate) fn sm(&self, j: usize, i: usize) -> usize {
        self.sm + tri(j, i)
    }
    #[inline]
    pub(crate) fn zz(&self, j: usize, i: usize) -> usize {
        self.zz + tri(j, i)
    }
    #[inline]
    pub(crate) fn sz(&self, j: usize, i: usize) -> usize {
        self.sz + j * self.k + i
    }
}

/// Every first- and second-order moment of the cavity field and the
/// atomic sub-ensembles.
///
/// Pair moments `(j, i)` refer to two *distinct* atoms, one from ensemble
/// `j` and one from ensemble `i`; `j == i` means two different atoms of the
/// same ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantState {
    layout: Layout,
    data: Vec<C64>,
}

impl CumulantState {
    pub fn zeros(k: usize) -> Self {
        let layout = Layout::new(k);
        CumulantState {
            layout,
            data: vec![C64::new(0.0, 0.0); layout.len()],
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn ensembles(&self) -> usize {
        self.layout.k
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// `<a>`
    pub fn a(&self) -> C64 {
        self.data[IDX_A]
    }
    /// `<a^+ a>`
    pub fn n(&self) -> f64 {
        self.data[IDX_N].re
    }
    /// `<a^2>`
    pub fn aa(&self) -> C64 {
        self.data[IDX_AA]
    }
    /// `<sigma_i^->`
    pub fn s(&self, i: usize) -> C64 {
        self.data[self.layout.s(i)]
    }
    /// `<sigma_i^z>`
    pub fn z(&self, i: usize) -> f64 {
        self.data[self.layout.z(i)].re
    }
    /// `<a sigma_i^+>`
    pub fn as_p(&self, i: usize) -> C64 {
        self.data[self.layout.as_p(i)]
    }
    /// `<a sigma_i^->`
    pub fn as_m(&self, i: usize) -> C64 {
        self.data[self.layout.as_m(i)]
    }
    /// `<a sigma_i^z>`
    pub fn as_z(&self, i: usize) -> C64 {
        self.data[self.layout.as_z(i)]
    }
    /// `<sigma_j^- sigma_i^+>`
    pub fn sp(&self, j: usize, i: usize) -> C64 {
        if j <= i {
            self.data[self.layout.sp(j, i)]
        } else {
            self.data[self.layout.sp(i, j)].conj()
        }
    }
    /// `<sigma_j^- sigma_i^->`
    pub fn sm(&self, j: usize, i: usize) -> C64 {
        let (lo, hi) = if j <= i { (j, i) } else { (i, j) };
        self.data[self.layout.sm(lo, hi)]
    }
    /// `<sigma_j^- sigma_i^z>`
    pub fn sz(&self, j: usize, i: usize) -> C64 {
        self.data[self.layout.sz(j, i)]
    }
    /// `<sigma_j^z sigma_i^z>`
    pub fn zz(&self, j: usize, i: usize) -> f64 {
        let (lo, hi) = if j <= i { (j, i) } else { (i, j) };
        self.data[self.layout.zz(lo, hi)].re
    }

    pub fn set_a(&mut self, v: C64) {
        self.data[IDX_A] = v;
    }
    pub fn set_n(&mut self, v: f64) {
        self.data[IDX_N] = C64::new(v, 0.0);
    }
    pub fn set_aa(&mut self, v: C64) {
        self.data[IDX_AA] = v;
    }
    pub fn set_s(&mut self, i: usize, v: C64) {
        let idx = self.layout.s(i);
        self.data[idx] = v;
    }
    pub fn set_z(&mut self, i: usize, v: f64) {
        let idx = self.layout.z(i);
        self.data[idx] = C64::new(v, 0.0);
    }
    pub fn set_as_p(&mut self, i: usize, v: C64) {
        let idx = self.layout.as_p(i);
        self.data[idx] = v;
    }
    pub fn set_as_m(&mut self, i: usize, v: C64) {
        let idx = self.layout.as_m(i);
        self.data[idx] = v;
    }
    pub fn set_as_z(&mut self, i: usize, v: C64) {
        let idx = self.layout.as_z(i);
        self.data[idx] = v;
    }
    pub fn set_sp(&mut self, j: usize, i: usize, v: C64) {
        if j <= i {
            let idx = self.layout.sp(j, i);
            self.data[idx] = v;
        } else {
            let idx = self.layout.sp(i, j);
            self.data[idx] = v.conj();
        }
    }
    pub fn set_sm(&mut self, j: usize, i: usize, v: C64) {
        let (lo, hi) = if j <= i { (j, i) } else { (i, j) };
        let idx = self.layout.sm(lo, hi);
        self.data[idx] = v;
    }
    pub fn set_sz(&mut self, j: usize, i: usize, v: C64) {
        let idx = self.layout.sz(j, i);
        self.data[idx] = v;
    }
    pub fn set_zz(&mut self, j: usize, i: usize, v: f64) {
        let (lo, hi) = if j <= i { (j, i) } else { (i, j) };
        let idx = self.layout.zz(lo, hi);
        self.data[idx] = C64::new(v, 0.0);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &CumulantState) {
        debug_assert_eq!(self.layout, other.layout);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y * alpha;
        }
    }

    /// Projects the quantities that must be real back onto the real axis.
    ///
    /// Off-diagonal Hermitian partners are implied by the packed storage, so
    /// only `n`, `z`, `zz` and the diagonal of `sp` need explicit repair.
    pub fn symmetrize(&mut self) {
        self.data[IDX_N].im = 0.0;
        let k = self.layout.k;
        for i in 0..k {
            let zi = self.layout.z(i);
            self.data[zi].im = 0.0;
            let d = self.layout.sp(i, i);
            self.data[d].im = 0.0;
            for j in 0..=i {
                let zz = self.layout.zz(j, i);
                self.data[zz].im = 0.0;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Checks the loose physicality bounds; returns the first violation.
    pub fn check_physical(&self, tol: f64) -> Result<(), String> {
        if self.n() < -1e-6 {
            return Err(format!("photon number {} is negative", self.n()));
        }
        for i in 0..self.layout.k {
            let z = self.z(i);
            if !(-1.0 - tol..=1.0 + tol).contains(&z) {
                return Err(format!("z[{i}] = {z} outside [-1, 1]"));
            }
            let s = self.s(i).norm();
            if s > 0.5 + tol {
                return Err(format!("|s[{i}]| = {s} exceeds 1/2"));
            }
        }
        Ok(())
    }
}

/// Serialized by moment name with full pair matrices.
impl Serialize for CumulantState {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Named {
            ensembles: usize,
            a: C64,
            n: f64,
            aa: C64,
            s: Vec<C64>,
            z: Vec<f64>,
            as_p: Vec<C64>,
            as_m: Vec<C64>,
            as_z: Vec<C64>,
            sp: Vec<Vec<C64>>,
            sm: Vec<Vec<C64>>,
            sz: Vec<Vec<C64>>,
            zz: Vec<Vec<f64>>,
        }
        let k = self.ensembles();
        let one = |f: &dyn Fn(usize) -> C64| (0..k).map(f).collect::<Vec<_>>();
        let two = |f: &dyn Fn(usize, usize) -> C64| (0..k).map(|j| (0..k).map(|i| f(j, i)).collect()).collect();
        Named {
            ensembles: k,
            a: self.a(),
            n: self.n(),
            aa: self.aa(),
            s: one(&|i| self.s(i)),
            z: (0..k).map(|i| self.z(i)).collect(),
            as_p: one(&|i| self.as_p(i)),
            as_m: one(&|i| self.as_m(i)),
            as_z: one(&|i| self.as_z(i)),
            sp: two(&|j, i| self.sp(j, i)),
            sm: two(&|j, i| self.sm(j, i)),
            sz: two(&|j, i| self.sz(j, i)),
            zz: (0..k).map(|j| (0..k).map(|i| self.zz(j, i)).collect()).collect(),
        }
        .serialize(ser)
    }
}
