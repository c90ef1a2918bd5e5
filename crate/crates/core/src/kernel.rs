//! Dense amplitude kernels shared by every register type in the crate.
//!
//! A register is `n` digits of a common radix `dim`, stored big-endian: digit 0
//! is the most significant one. Pure states, replica states (viewed either as
//! `2L` sites of radix `d^{2k}` or `4kL` qudits of radix `d`) and reduced
//! permutation states all go through the same two routines.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

/// Below this many amplitude blocks the kernels run sequentially.
const PAR_THRESHOLD: usize = 1 << 12;

#[derive(Clone, Copy)]
struct SharedMut(*mut C64);

// SAFETY: every block touched through this pointer owns a disjoint set of
// indices (see `apply_one`/`apply_two`), so concurrent writes never alias.
unsafe impl Send for SharedMut {}
unsafe impl Sync for SharedMut {}

impl SharedMut {
    #[inline]
    fn ptr(self) -> *mut C64 {
        self.0
    }
}

pub(crate) fn pow(base: usize, exp: usize) -> usize {
    (0..exp).fold(1usize, |acc, _| acc * base)
}

fn for_blocks<F>(n_blocks: usize, f: F)
where
    F: Fn(usize) + Sync + Send,
{
    if n_blocks >= PAR_THRESHOLD {
        (0..n_blocks).into_par_iter().with_min_len(256).for_each(f);
    } else {
        (0..n_blocks).for_each(f);
    }
}

/// Multiplies the `N` amplitudes at `ptr + base + offs[i]` by the row-major `N × N` matrix.
///
/// # Safety
/// The offsets must be distinct and in bounds, and no other thread may touch them.
#[inline(always)]
unsafe fn mul_fixed<const N: usize>(ptr: *mut C64, base: usize, offs: &[usize; N], mat: &[C64]) {
    let mut tmp = [C64::new(0.0, 0.0); N];
    for i in 0..N {
        tmp[i] = *ptr.add(base + offs[i]);
    }
    for (r, row) in mat.chunks_exact(N).enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..N {
            acc += row[i] * tmp[i];
        }
        *ptr.add(base + offs[r]) = acc;
    }
}

/// Same as [`mul_fixed`] for sizes only known at run time.
unsafe fn mul_dyn(ptr: *mut C64, base: usize, offs: &[usize], mat: &[C64], tmp: &mut [C64]) {
    let n = offs.len();
    for (t, &o) in tmp.iter_mut().zip(offs) {
        *t = *ptr.add(base + o);
    }
    for (r, row) in mat.chunks_exact(n).enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (m, t) in row.iter().zip(tmp.iter()) {
            acc += m * t;
        }
        *ptr.add(base + offs[r]) = acc;
    }
}

/// Runs `mat` over every block; `base_of(b)` is the first index of block `b`
/// and `offs` the in-block offsets in matrix order.
fn mul_blocks<B>(amps: &mut [C64], n_blocks: usize, offs: &[usize], mat: &[C64], base_of: B)
where
    B: Fn(usize) -> usize + Sync + Send,
{
    let ptr = SharedMut(amps.as_mut_ptr());
    macro_rules! fixed {
        ($n:literal) => {{
            let o: [usize; $n] = offs.try_into().expect("offset count");
            // SAFETY: blocks own disjoint index sets (callers build `base_of`/`offs` that way).
            for_blocks(n_blocks, move |b| unsafe { mul_fixed::<$n>(ptr.ptr(), base_of(b), &o, mat) })
        }};
    }
    match offs.len() {
        2 => fixed!(2),
        3 => fixed!(3),
        4 => fixed!(4),
        6 => fixed!(6),
        9 => fixed!(9),
        16 => fixed!(16),
        n => for_blocks(n_blocks, move |b| {
            let mut tmp = vec![C64::new(0.0, 0.0); n];
            // SAFETY: as above.
            unsafe { mul_dyn(ptr.ptr(), base_of(b), offs, mat, &mut tmp) }
        }),
    }
}

/// Applies a `dim × dim` row-major matrix to digit `pos`.
pub fn apply_one(amps: &mut [C64], dim: usize, n: usize, pos: usize, mat: &[C64]) {
    debug_assert_eq!(amps.len(), pow(dim, n));
    debug_assert!(pos < n);
    debug_assert_eq!(mat.len(), dim * dim);
    let stride = pow(dim, n - 1 - pos);
    let n_blocks = amps.len() / dim;
    let offs: Vec<usize> = (0..dim).map(|i| i * stride).collect();
    mul_blocks(amps, n_blocks, &offs, mat, move |b| (b / stride) * stride * dim + b % stride);
}

/// Applies a `dim² × dim²` row-major matrix to the ordered digit pair
/// `(p, q)`; the gate basis is `|s_p s_q⟩` with `s_p` most significant.
/// `p` and `q` need not be adjacent but must differ.
pub fn apply_two(amps: &mut [C64], dim: usize, n: usize, p: usize, q: usize, mat: &[C64]) {
    debug_assert_eq!(amps.len(), pow(dim, n));
    debug_assert!(p < n && q < n && p != q);
    let d2 = dim * dim;
    debug_assert_eq!(mat.len(), d2 * d2);
    let sp = pow(dim, n - 1 - p);
    let sq = pow(dim, n - 1 - q);
    let (s_hi, s_lo) = if sp > sq { (sp, sq) } else { (sq, sp) };
    let mid_count = s_hi / (s_lo * dim);
    let n_blocks = amps.len() / d2;
    let offs: Vec<usize> = (0..d2).map(|r| (r / dim) * sp + (r % dim) * sq).collect();
    mul_blocks(amps, n_blocks, &offs, mat, move |b| {
        let outer = b / s_lo;
        (outer / mid_count) * s_hi * dim + (outer % mid_count) * s_lo * dim + b % s_lo
    });
}

/// Contracts the register with a product of one-digit vectors:
/// `Σ_i amps[i] · Π_x conj(w_x[i_x])`, i.e. the inner product `⟨w_0 ⊗ … ⊗ w_{n-1} | amps⟩`.
pub fn product_overlap(amps: &[C64], dim: usize, factors: &[&[C64]]) -> C64 {
    let n = factors.len();
    debug_assert_eq!(amps.len(), pow(dim, n));
    if n == 0 {
        return amps[0];
    }
    // contract the least significant digit first
    let last = factors[n - 1];
    let mut cur: Vec<C64> = amps
        .par_chunks(dim)
        .map(|c| c.iter().zip(last.iter()).map(|(a, w)| a * w.conj()).sum())
        .collect();
    for x in (0..n - 1).rev() {
        let w = factors[x];
        cur = cur
            .chunks(dim)
            .map(|c| c.iter().zip(w.iter()).map(|(a, w)| a * w.conj()).sum())
            .collect();
    }
    cur[0]
}

/// Amplitude of the product vector `⊗_x w_x` at flat index `idx`.
pub fn product_entry(dim: usize, factors: &[&[C64]], mut idx: usize) -> C64 {
    let mut acc = C64::new(1.0, 0.0);
    for w in factors.iter().rev() {
        acc *= w[idx % dim];
        idx /= dim;
    }
    acc
}

/// Kronecker product of vectors, first factor most significant.
pub fn kron_vecs(factors: &[&[C64]]) -> Vec<C64> {
    let mut out = vec![C64::new(1.0, 0.0)];
    for f in factors {
        let mut next = Vec::with_capacity(out.len() * f.len());
        for a in &out {
            for b in f.iter() {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    if v.len() >= 1 << 16 {
        pairwise_sum(&v.par_chunks(4096).map(|c| c.iter().map(|a| a.norm_sqr()).sum()).collect::<Vec<f64>>())
    } else {
        v.iter().map(|a| a.norm_sqr()).sum()
    }
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() >= 1 << 16 {
        a.par_chunks(4096)
            .zip(b.par_chunks(4096))
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u.conj() * v).sum::<C64>())
            .collect::<Vec<C64>>()
            .into_iter()
            .sum()
    } else {
        a.iter().zip(b).map(|(u, v)| u.conj() * v).sum()
    }
}

/// Sum in a fixed binary-tree order, independent of how the inputs were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    // dense reference: build the full operator as a Kronecker product
    fn embed_two(dim: usize, n: usize, p: usize, q: usize, mat: &[C64]) -> Vec<C64> {
        let size = pow(dim, n);
        let mut full = vec![C64::new(0.0, 0.0); size * size];
        for col in 0..size {
            for row in 0..size {
                let dig = |mut x: usize| {
                    let mut ds = vec![0; n];
                    for k in (0..n).rev() {
                        ds[k] = x % dim;
                        x /= dim;
                    }
                    ds
                };
                let (dr, dc) = (dig(row), dig(col));
                let others_eq = (0..n).filter(|&k| k != p && k != q).all(|k| dr[k] == dc[k]);
                if others_eq {
                    let r = dr[p] * dim + dr[q];
                    let cc = dc[p] * dim + dc[q];
                    full[row * size + col] = mat[r * dim * dim + cc];
                }
            }
        }
        full
    }

    #[test]
    fn apply_two_matches_dense_embedding() {
        let dim = 3;
        let n = 4;
        let d2 = dim * dim;
        let mat: Vec<C64> = (0..d2 * d2).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.7).cos())).collect();
        let v: Vec<C64> = (0..pow(dim, n)).map(|i| C64::new(i as f64 * 0.1, -(i as f64) * 0.03)).collect();
        for &(p, q) in &[(0usize, 1usize), (1, 2), (2, 0), (3, 1), (0, 3)] {
            let full = embed_two(dim, n, p, q, &mat);
            let size = v.len();
            let expect: Vec<C64> = (0..size).map(|r| (0..size).map(|cc| full[r * size + cc] * v[cc]).sum()).collect();
            let mut got = v.clone();
            apply_two(&mut got, dim, n, p, q, &mat);
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).norm() < 1e-10, "p={p} q={q}");
            }
        }
    }

    #[test]
    fn apply_one_swaps_digit() {
        // X on the middle qubit of |000⟩ → |010⟩
        let mut v = vec![c(0.0); 8];
        v[0] = c(1.0);
        let x = [c(0.0), c(1.0), c(1.0), c(0.0)];
        apply_one(&mut v, 2, 3, 1, &x);
        assert_eq!(v[2], c(1.0));
        assert_eq!(v.iter().map(|a| a.norm()).sum::<f64>(), 1.0);
    }

    #[test]
    fn product_overlap_matches_kron() {
        let w0 = [C64::new(0.3, 0.1), C64::new(-0.2, 0.5)];
        let w1 = [C64::new(1.0, -0.4), C64::new(0.7, 0.0)];
        let w2 = [C64::new(0.0, 1.0), C64::new(0.25, 0.25)];
        let amps: Vec<C64> = (0..8).map(|i| C64::new(i as f64, 1.0 / (i as f64 + 1.0))).collect();
        let full = kron_vecs(&[&w0, &w1, &w2]);
        let expect: C64 = full.iter().zip(&amps).map(|(w, a)| w.conj() * a).sum();
        let got = product_overlap(&amps, 2, &[&w0, &w1, &w2]);
        assert!((got - expect).norm() < 1e-12);
        for (i, f) in full.iter().enumerate() {
            assert!((product_entry(2, &[&w0, &w1, &w2], i) - f).norm() < 1e-14);
        }
    }

    #[test]
    fn parallel_path_agrees_with_sequential() {
        let dim = 2;
        let n = 16;
        let mat: Vec<C64> = (0..16).map(|i| C64::new(((i * 7) % 5) as f64 - 2.0, (i % 3) as f64)).collect();
        let v: Vec<C64> = (0..pow(dim, n)).map(|i| C64::new((i % 17) as f64, (i % 5) as f64)).collect();
        let mut a = v.clone();
        apply_two(&mut a, dim, n, 0, 1, &mat);
        // same operation via a relabelled sequential reference on a small slice:
        // amplitudes with digits (0,1) fixed to (x,y) form contiguous quarters
        let quarter = v.len() / 4;
        for lo in (0..quarter).step_by(997) {
            let ins: Vec<C64> = (0..4).map(|r| v[r * quarter + lo]).collect();
            for r in 0..4 {
                let e: C64 = (0..4).map(|cc| mat[r * 4 + cc] * ins[cc]).sum();
                assert!((a[r * quarter + lo] - e).norm() < 1e-12);
            }
        }
    }
}
