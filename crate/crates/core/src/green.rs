//! Pseudoinverse Laplacians, the torus Green function and the reflection / difference
//! operator identities relating free and periodic Green functions.

use crate::error::{Error, Result};
use crate::lattice::{Graph, Kind, LatticeDomain, SimpleGraph};
use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

pub const DEFAULT_DENSE_CUTOFF: usize = 1024;
pub const DEFAULT_CG_TOL: f64 = 1e-11;

#[derive(Clone, Debug)]
enum Backend {
    Dense(DMatrix<f64>),
    /// Separable cosine basis of the free Laplacian.
    FreeSpectral { l: usize, u: DMatrix<f64>, lam: Vec<f64> },
    /// Torus Laplacian diagonalised by the 2D FFT; `inv_lam[0] = 0`.
    PeriodicSpectral { l: usize, inv_lam: Vec<f64> },
    Cg { graph: SimpleGraph, tol: f64 },
}

/// Represents g = (−Δ)^{-1}, the negated pseudoinverse: g·1 = 0 and (−Δ)g f = f for mean-zero f.
#[derive(Clone, Debug)]
pub struct GreenOperator {
    n: usize,
    backend: Backend,
}

#[derive(Clone, Copy, Debug)]
pub struct GreenOptions {
    pub dense_cutoff: usize,
    pub cg_tol: f64,
}

impl Default for GreenOptions {
    fn default() -> Self {
        GreenOptions { dense_cutoff: DEFAULT_DENSE_CUTOFF, cg_tol: DEFAULT_CG_TOL }
    }
}

fn laplacian_matrix<G: Graph + ?Sized>(g: &G) -> DMatrix<f64> {
    let n = g.n();
    let mut m = DMatrix::zeros(n, n);
    g.for_each_edge(&mut |a, b, w| {
        let w = w as f64;
        m[(a, a)] += w;
        m[(b, b)] += w;
        m[(a, b)] -= w;
        m[(b, a)] -= w;
    });
    m
}

/// Dense (−Δ)^{-1} via (−Δ + J/n)^{-1} − J/n, valid for connected graphs.
pub fn dense_green<G: Graph + ?Sized>(g: &G) -> Result<DMatrix<f64>> {
    let n = g.n();
    let nf = n as f64;
    let mut a = laplacian_matrix(g);
    a.add_scalar_mut(1.0 / nf);
    let chol = a.cholesky().ok_or(Error::FactorizationFailure)?;
    let mut inv = chol.inverse();
    inv.add_scalar_mut(-1.0 / nf);
    // symmetrise away rounding
    let t = inv.transpose();
    Ok((inv + t) * 0.5)
}

fn project_mean_zero(f: &[f64]) -> Vec<f64> {
    let m = f.iter().sum::<f64>() / f.len() as f64;
    f.iter().map(|x| x - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean-zero tolerance used by the "is this a test function" checks.
pub fn is_mean_zero(f: &[f64]) -> bool {
    let s: f64 = f.iter().sum();
    let scale: f64 = f.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
    s.abs() <= 1e-12 * scale
}

fn cosine_basis(l: usize) -> (DMatrix<f64>, Vec<f64>) {
    // u[(a,p)] orthonormal eigenvectors of the path Laplacian, eigenvalue 2 − 2cos(πp/L)
    let lf = l as f64;
    let mut u = DMatrix::zeros(l, l);
    for p in 0..l {
        let norm = if p == 0 { (1.0 / lf).sqrt() } else { (2.0 / lf).sqrt() };
        for a in 0..l {
            u[(a, p)] = norm * (PI * p as f64 * (a as f64 + 0.5) / lf).cos();
        }
    }
    let lam = (0..l).map(|p| 2.0 - 2.0 * (PI * p as f64 / lf).cos()).collect();
    (u, lam)
}

fn fft2(data: &mut [Complex64], l: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(l) } else { planner.plan_fft_forward(l) };
    for row in data.chunks_mut(l) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); l];
    for b in 0..l {
        for a in 0..l {
            col[a] = data[a * l + b];
        }
        fft.process(&mut col);
        for a in 0..l {
            data[a * l + b] = col[a];
        }
    }
}

fn torus_eigenvalue(l: usize, p: usize, q: usize) -> f64 {
    let lf = l as f64;
    4.0 - 2.0 * (2.0 * PI * p as f64 / lf).cos() - 2.0 * (2.0 * PI * q as f64 / lf).cos()
}

impl GreenOperator {
    pub fn new(dom: &LatticeDomain) -> Result<Self> {
        Self::with_options(dom, GreenOptions::default())
    }

    pub fn with_options(dom: &LatticeDomain, opt: GreenOptions) -> Result<Self> {
        let n = dom.n();
        let l = dom.side();
        let op = if n <= opt.dense_cutoff {
            GreenOperator { n, backend: Backend::Dense(dense_green(dom)?) }
        } else {
            match dom.kind() {
                Kind::Free => {
                    let (u, lam) = cosine_basis(l);
                    GreenOperator { n, backend: Backend::FreeSpectral { l, u, lam } }
                }
                // the L=2 torus collapses the wrap edge, so its spectrum differs from the FFT one
                Kind::Periodic if l >= 4 => {
                    let mut inv_lam = vec![0.0; l * l];
                    for p in 0..l {
                        for q in 0..l {
                            if p + q > 0 {
                                inv_lam[p * l + q] = 1.0 / torus_eigenvalue(l, p, q);
                            }
                        }
                    }
                    GreenOperator { n, backend: Backend::PeriodicSpectral { l, inv_lam } }
                }
                _ => GreenOperator {
                    n,
                    backend: Backend::Cg { graph: SimpleGraph::from_graph(dom), tol: opt.cg_tol },
                },
            }
        };
        op.probe(dom)?;
        Ok(op)
    }

    /// Dense operator for any connected graph.
    pub fn for_graph<G: Graph + ?Sized>(g: &G) -> Result<Self> {
        let op = GreenOperator { n: g.n(), backend: Backend::Dense(dense_green(g)?) };
        op.probe(g)?;
        Ok(op)
    }

    fn probe<G: Graph + ?Sized>(&self, g: &G) -> Result<()> {
        let n = self.n;
        for s in 0..3 {
            let f: Vec<f64> =
                project_mean_zero(&(0..n).map(|j| ((j * (7 + s) + 3 * s) % 11) as f64 - 5.0).collect::<Vec<_>>());
            let x = self.apply(&f)?;
            let lx = g.laplacian_apply(&x)?;
            let r = lx.iter().zip(&f).map(|(a, b)| (-a - b).powi(2)).sum::<f64>().sqrt();
            if r > 1e-8 * dot(&f, &f).sqrt().max(1.0) {
                return Err(Error::SingularBeyondKernel(r));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.backend, Backend::Dense(_))
    }

    /// The dense matrix, when the dense backend is in use.
    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.backend {
            Backend::Dense(m) => Some(m),
            _ => None,
        }
    }

    /// g·f. The constant part of f is annihilated and the result is mean-zero.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: f.len() });
        }
        let f0 = project_mean_zero(f);
        let out = match &self.backend {
            Backend::Dense(g) => {
                let v = g * nalgebra::DVector::from_column_slice(&f0);
                v.as_slice().to_vec()
            }
            Backend::FreeSpectral { l, u, lam } => {
                let fm = DMatrix::from_row_slice(*l, *l, &f0);
                let mut c = u.transpose() * fm * u;
                for p in 0..*l {
                    for q in 0..*l {
                        let e = lam[p] + lam[q];
                        c[(p, q)] = if p + q == 0 { 0.0 } else { c[(p, q)] / e };
                    }
                }
                let x = u * c * u.transpose();
                let mut out = vec![0.0; self.n];
                for a in 0..*l {
                    for b in 0..*l {
                        out[a * l + b] = x[(a, b)];
                    }
                }
                out
            }
            Backend::PeriodicSpectral { l, inv_lam } => {
                let mut d: Vec<Complex64> = f0.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                fft2(&mut d, *l, false);
                for (z, w) in d.iter_mut().zip(inv_lam) {
                    *z *= *w;
                }
                fft2(&mut d, *l, true);
                let s = 1.0 / (l * l) as f64;
                d.iter().map(|z| z.re * s).collect()
            }
            Backend::Cg { graph, tol } => cg_solve(graph, &f0, *tol),
        };
        Ok(project_mean_zero(&out))
    }

    /// ⟨f, g f⟩ for mean-zero f.
    pub fn quadratic_form(&self, f: &[f64]) -> Result<f64> {
        if !is_mean_zero(f) {
            return Err(Error::NotMeanZero(f.iter().sum()));
        }
        let gf = self.apply(f)?;
        Ok(dot(f, &gf))
    }

    /// ⟨f, g h⟩ (both mean-zero by projection).
    pub fn bilinear(&self, f: &[f64], h: &[f64]) -> Result<f64> {
        let gh = self.apply(h)?;
        Ok(dot(&project_mean_zero(f), &gh))
    }

    /// σ with (−Δ)σ = f/β and σ_v = 0.
    pub fn shift_field(&self, f: &[f64], beta: f64, v: usize) -> Result<Vec<f64>> {
        let gf = self.apply(f)?;
        let base = gf[v] / beta;
        Ok(gf.iter().map(|x| x / beta - base).collect())
    }
}

fn cg_solve(g: &SimpleGraph, f: &[f64], tol: f64) -> Vec<f64> {
    let n = f.len();
    let neg_lap = |x: &[f64]| -> Vec<f64> {
        let mut y = g.laplacian_apply(x).expect("dimension");
        y.iter_mut().for_each(|v| *v = -*v);
        y
    };
    let mut x = vec![0.0; n];
    let mut r = f.to_vec();
    let mut p = r.clone();
    let fnorm = dot(f, f).sqrt();
    if fnorm == 0.0 {
        return x;
    }
    let mut rr = dot(&r, &r);
    for _ in 0..(10 * n + 100) {
        if rr.sqrt() <= tol * fnorm {
            break;
        }
        let ap = neg_lap(&p);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        r = project_mean_zero(&r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    x
}

/// Translation-invariant torus Green function G_{L2}(t,s) = (−Δ^p)^{-1}_{(0,0),(t,s)}.
#[derive(Clone, Debug)]
pub struct PeriodicGreen {
    l2: usize,
    table: Vec<f64>,
}

impl PeriodicGreen {
    pub fn new(l2: usize) -> Result<Self> {
        let dom = LatticeDomain::new(Kind::Periodic, l2)?;
        let table = if l2 >= 4 {
            let mut d = vec![Complex64::new(0.0, 0.0); l2 * l2];
            for p in 0..l2 {
                for q in 0..l2 {
                    if p + q > 0 {
                        d[p * l2 + q] = Complex64::new(1.0 / torus_eigenvalue(l2, p, q), 0.0);
                    }
                }
            }
            fft2(&mut d, l2, true);
            let s = 1.0 / (l2 * l2) as f64;
            d.iter().map(|z| z.re * s).collect()
        } else {
            let g = dense_green(&dom)?;
            (0..l2 * l2).map(|j| g[(0, j)]).collect()
        };
        Ok(PeriodicGreen { l2, table })
    }

    pub fn side(&self) -> usize {
        self.l2
    }

    /// Coordinates are reduced mod L2, negative values allowed.
    pub fn value(&self, t: i64, s: i64) -> f64 {
        let l = self.l2 as i64;
        let a = t.rem_euclid(l) as usize;
        let b = s.rem_euclid(l) as usize;
        self.table[a * self.l2 + b]
    }
}

/// T_fp: reflect a function on the free L-box to the 2L torus.
pub fn reflect_t_fp(l: usize, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != l * l {
        return Err(Error::DimensionMismatch { expected: l * l, got: f.len() });
    }
    let l2 = 2 * l;
    let mut out = vec![0.0; l2 * l2];
    for a in 0..l2 {
        for b in 0..l2 {
            let c = a.min(l2 - 1 - a);
            let d = b.min(l2 - 1 - b);
            out[a * l2 + b] = f[c * l + d];
        }
    }
    Ok(out)
}

/// Backward differences on the L2 torus and their adjoints.
#[derive(Clone, Copy, Debug)]
pub struct DifferenceOps {
    pub l2: usize,
}

impl DifferenceOps {
    pub fn new(l2: usize) -> Result<Self> {
        LatticeDomain::new(Kind::Periodic, l2)?;
        Ok(DifferenceOps { l2 })
    }

    fn shifted(&self, f: &[f64], axis: usize, by: i64) -> Vec<f64> {
        let l = self.l2;
        let li = l as i64;
        let mut out = vec![0.0; l * l];
        for a in 0..l {
            for b in 0..l {
                let (c, d) = if axis == 1 {
                    (((a as i64 + by).rem_euclid(li)) as usize, b)
                } else {
                    (a, ((b as i64 + by).rem_euclid(li)) as usize)
                };
                out[a * l + b] = f[c * l + d];
            }
        }
        out
    }

    /// (∂_axis f)(j) = f(j) − f(j − e_axis).
    pub fn d(&self, axis: usize, f: &[f64]) -> Vec<f64> {
        let s = self.shifted(f, axis, -1);
        f.iter().zip(&s).map(|(x, y)| x - y).collect()
    }

    /// Adjoint: (∂ᵀ g)(j) = g(j) − g(j + e_axis).
    pub fn dt(&self, axis: usize, f: &[f64]) -> Vec<f64> {
        let s = self.shifted(f, axis, 1);
        f.iter().zip(&s).map(|(x, y)| x - y).collect()
    }
}

/// f_y on the free L-box: +1 on row y1, −1 on row y1+1, for first coordinate ≥ y0.
pub fn f_y(l: usize, y: (usize, usize)) -> Result<Vec<f64>> {
    if y.1 + 1 >= l {
        return Err(Error::BadRow { y1: y.1, max: l - 1 });
    }
    let mut f = vec![0.0; l * l];
    for x0 in y.0..l {
        f[x0 * l + y.1] = 1.0;
        f[x0 * l + y.1 + 1] = -1.0;
    }
    Ok(f)
}

/// F_y on the 2L torus, with ∂₂F_y = T_fp f_y.
pub fn big_f_y(l: usize, y: (usize, usize)) -> Result<Vec<f64>> {
    if y.1 + 1 >= l {
        return Err(Error::BadRow { y1: y.1, max: l - 1 });
    }
    let l2 = 2 * l;
    let mut f = vec![0.0; l2 * l2];
    for a in y.0..=(l2 - 1 - y.0) {
        f[a * l2 + y.1] = 1.0;
        f[a * l2 + (l2 - 2 - y.1)] = -1.0;
    }
    Ok(f)
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct GreenLowerReport {
    pub l: usize,
    pub y0: usize,
    pub y1: usize,
    /// ⟨f_y, (−Δ^f)^{-1} f_y⟩
    pub lhs: f64,
    /// (L−y0) − D5 ln(L−y0+1)
    pub bound: f64,
    /// ⟨∂₁F_y, (−Δ^p_{2L})^{-1} ∂₁F_y⟩
    pub green_id2: f64,
    /// (L−y0) − lhs expressed through the torus Green function
    pub gamma: f64,
    pub d5: f64,
}

/// Lower bound ⟨f_y,(−Δ^f)^{-1}f_y⟩ ≥ (L−y0) − D5 ln(L−y0+1), with the companion torus quantity.
pub fn claim_green_lower(
    l: usize,
    y: (usize, usize),
    d5: f64,
    free_green: &GreenOperator,
    torus: &PeriodicGreen,
) -> Result<GreenLowerReport> {
    let f = f_y(l, y)?;
    let lhs = free_green.quadratic_form(&f)?;
    let l2 = 2 * l;
    assert_eq!(torus.side(), l2);
    let big = big_f_y(l, y)?;
    let ops = DifferenceOps::new(l2)?;
    let d1 = ops.d(1, &big);
    // ⟨h, G h⟩ through the translation-invariant kernel
    let supp: Vec<usize> = (0..d1.len()).filter(|&i| d1[i] != 0.0).collect();
    let mut green_id2 = 0.0;
    for &i in &supp {
        for &j in &supp {
            let (a, b) = ((i / l2) as i64, (i % l2) as i64);
            let (c, d) = ((j / l2) as i64, (j % l2) as i64);
            green_id2 += d1[i] * d1[j] * torus.value(c - a, d - b);
        }
    }
    // ⟨∂₁(F_y·1_box), G ∂₁F_y⟩ reduces to four kernel values
    let (y0, y1) = (y.0 as i64, y.1 as i64);
    let li = l as i64;
    let t = 2 * (li - y0);
    let c = 2 * (li - 1 - y1);
    let gamma = torus.value(0, 0) - torus.value(t, 0) - torus.value(0, c) + torus.value(t, c);
    let len = (l - y.0) as f64;
    Ok(GreenLowerReport {
        l,
        y0: y.0,
        y1: y.1,
        lhs,
        bound: len - d5 * (len + 1.0).ln(),
        green_id2,
        gamma,
        d5,
    })
}

/// Empirical sup over L2 and a ≥ 1 of (G(0,0) − G(2a,0)) / ln(a+1).
pub fn empirical_d6(sides: &[usize]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for &l2 in sides {
        let pg = PeriodicGreen::new(l2)?;
        for a in 1..=(l2 / 2) {
            let r = (pg.value(0, 0) - pg.value(2 * a as i64, 0)) / ((a + 1) as f64).ln();
            best = best.max(r);
        }
    }
    Ok(best)
}

/// D5 = 4·D6. The correction γ is at most G(0,0) − G(2(L−y0),0) ≤ D6 ln(L−y0+1),
/// and the torus quantity equals 4γ.
pub fn d5_from_d6(d6: f64) -> f64 {
    4.0 * d6
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mean_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        project_mean_zero(&(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn free2_dipole_effective_resistance() {
        let d = LatticeDomain::free(2);
        let g = GreenOperator::new(&d).unwrap();
        let mut f = vec![0.0; 4];
        f[0] = 1.0;
        f[3] = -1.0;
        assert!((g.quadratic_form(&f).unwrap() - 1.0).abs() < 1e-13);
        let f2: Vec<f64> = f.iter().map(|x| 2.0 * x).collect();
        assert!((g.quadratic_form(&f2).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(g.quadratic_form(&[0.0; 4]).unwrap(), 0.0);
        assert!(matches!(g.quadratic_form(&[1.0, 0.0, 0.0, 0.0]), Err(Error::NotMeanZero(_))));
    }

    #[test]
    fn constants_map_to_zero_and_inverse_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [
            LatticeDomain::free(3),
            LatticeDomain::free(6),
            LatticeDomain::periodic(2),
            LatticeDomain::periodic(6),
            LatticeDomain::zero(2),
            LatticeDomain::zero(5),
        ] {
            let g = GreenOperator::new(&d).unwrap();
            let m = g.matrix().unwrap();
            assert!((m - m.transpose()).abs().max() < 1e-14);
            let c = g.apply(&vec![1.7; d.n()]).unwrap();
            assert!(c.iter().all(|x| x.abs() < 1e-12));
            for _ in 0..10 {
                let f = rand_mean_zero(&mut rng, d.n());
                let x = g.apply(&f).unwrap();
                let lx: Vec<f64> = d.laplacian_apply(&x).unwrap().iter().map(|v| -v).collect();
                assert!(max_abs_diff(&lx, &f) < 1e-10);
            }
        }
    }

    #[test]
    fn backends_agree_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tiny = GreenOptions { dense_cutoff: 0, cg_tol: 1e-13 };
        for d in [LatticeDomain::free(7), LatticeDomain::periodic(8), LatticeDomain::zero(5)] {
            let dense = GreenOperator::for_graph(&d).unwrap();
            let other = GreenOperator::with_options(&d, tiny).unwrap();
            assert!(!other.is_dense());
            for _ in 0..5 {
                let f = rand_mean_zero(&mut rng, d.n());
                let a = dense.apply(&f).unwrap();
                let b = other.apply(&f).unwrap();
                assert!(max_abs_diff(&a, &b) < 1e-10, "{:?}", d);
            }
        }
    }

    #[test]
    fn energy_identity_for_shift_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = LatticeDomain::free(5);
        let g = GreenOperator::new(&d).unwrap();
        for beta in [0.3, 1.0, 4.0] {
            let f = rand_mean_zero(&mut rng, d.n());
            let sigma = g.shift_field(&f, beta, 7).unwrap();
            assert_eq!(sigma[7], 0.0);
            let lhs = g.quadratic_form(&f).unwrap();
            let rhs = beta * beta * d.dirichlet_form(&sigma).unwrap();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.max(1.0));
            let ls = d.laplacian_apply(&sigma).unwrap();
            for j in 0..d.n() {
                assert!((-ls[j] - f[j] / beta).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn periodic_green_symmetries_and_dense_oracle() {
        let pg = PeriodicGreen::new(4).unwrap();
        let dom = LatticeDomain::periodic(4);
        let dense = dense_green(&dom).unwrap();
        let oracle = dense[(0, 0)] - dense[(0, dom.index(2, 0))];
        assert!((pg.value(0, 0) - pg.value(2, 0) - oracle).abs() < 1e-13);
        let pg8 = PeriodicGreen::new(8).unwrap();
        let dense8 = dense_green(&LatticeDomain::periodic(8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..8i64 {
            for s in 0..8i64 {
                assert!((pg8.value(t, s) - pg8.value(s, t)).abs() < 1e-13);
                assert!((pg8.value(t, s) - pg8.value(-t, s)).abs() < 1e-13);
                let (a, b) = (rng.random_range(0..8i64), rng.random_range(0..8i64));
                let i = (a * 8 + b) as usize;
                let j = (((a + t) % 8) * 8 + (b + s) % 8) as usize;
                assert!((dense8[(i, j)] - pg8.value(t, s)).abs() < 1e-12);
            }
        }
        let sum: f64 = (0..64).map(|j| pg8.value((j / 8) as i64, (j % 8) as i64)).sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn reflection_examples_and_intertwining() {
        let mut f = vec![0.0; 4];
        f[0] = 1.0;
        let t = reflect_t_fp(2, &f).unwrap();
        let ones: Vec<usize> = (0..16).filter(|&i| t[i] == 1.0).collect();
        assert_eq!(ones, vec![0, 3, 12, 15]);
        assert!(reflect_t_fp(3, &[2.0; 9]).unwrap().iter().all(|&x| x == 2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for l in [2usize, 3, 5, 8] {
            let free = LatticeDomain::free(l);
            let per = LatticeDomain::periodic(2 * l);
            for _ in 0..50 {
                let f: Vec<f64> = (0..l * l).map(|_| rng.random_range(-1.0..1.0)).collect();
                let lhs = per.laplacian_apply(&reflect_t_fp(l, &f).unwrap()).unwrap();
                let rhs = reflect_t_fp(l, &free.laplacian_apply(&f).unwrap()).unwrap();
                assert!(max_abs_diff(&lhs, &rhs) <= 1e-12);
            }
        }
    }

    #[test]
    fn difference_operators() {
        let ops = DifferenceOps::new(6).unwrap();
        assert!(ops.d(1, &[3.0; 36]).iter().all(|&x| x == 0.0));
        let dom = LatticeDomain::periodic(6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s1 = ops.d(1, &ops.dt(1, &f));
        let s2 = ops.d(2, &ops.dt(2, &f));
        let lap = dom.laplacian_apply(&f).unwrap();
        for j in 0..36 {
            assert!((s1[j] + s2[j] + lap[j]).abs() < 1e-13);
        }
        // adjointness
        let h: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!((dot(&ops.d(2, &f), &h) - dot(&f, &ops.dt(2, &h))).abs() < 1e-13);
    }

    #[test]
    fn f_y_and_big_f_y_relation() {
        for l in [2usize, 4, 5] {
            for y0 in 0..l {
                for y1 in 0..l - 1 {
                    let fy = f_y(l, (y0, y1)).unwrap();
                    let big = big_f_y(l, (y0, y1)).unwrap();
                    let ops = DifferenceOps::new(2 * l).unwrap();
                    assert_eq!(ops.d(2, &big), reflect_t_fp(l, &fy).unwrap());
                }
            }
            assert!(matches!(f_y(l, (0, l - 1)), Err(Error::BadRow { .. })));
        }
    }

    #[test]
    fn claim_green_lower_small_cases() {
        let d6 = empirical_d6(&[8, 16, 32]).unwrap();
        let d5 = d5_from_d6(d6);
        let l = 4;
        let g = GreenOperator::new(&LatticeDomain::free(l)).unwrap();
        let pg = PeriodicGreen::new(2 * l).unwrap();
        for y0 in 0..l {
            for y1 in 0..l - 1 {
                let r = claim_green_lower(l, (y0, y1), d5, &g, &pg).unwrap();
                assert!((r.lhs - ((l - y0) as f64 - r.gamma)).abs() < 1e-10, "{:?}", r);
                assert!(r.lhs >= r.bound);
                assert!((r.green_id2 - 4.0 * r.gamma).abs() < 1e-10);
                assert!(r.green_id2 <= d5 * ((l - y0 + 1) as f64).ln() + 1e-12);
                assert!(r.lhs.is_finite());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn quadratic_form_nonnegative_and_bilinear(seed in any::<u64>(), l in 2usize..6, c in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = LatticeDomain::free(l);
            let g = GreenOperator::new(&d).unwrap();
            let f = rand_mean_zero(&mut rng, d.n());
            let q = g.quadratic_form(&f).unwrap();
            prop_assert!(q >= 0.0);
            let cf: Vec<f64> = f.iter().map(|x| c * x).collect();
            prop_assert!((g.quadratic_form(&cf).unwrap() - c * c * q).abs() < 1e-10 * (1.0 + q * c * c));
        }

        #[test]
        fn periodic_identities(seed in any::<u64>(), e in 1u32..4) {
            let l2 = 2usize << e; // 4..16
            let dom = LatticeDomain::periodic(l2);
            let g = GreenOperator::with_options(&dom, GreenOptions { dense_cutoff: 0, cg_tol: 1e-12 }).unwrap();
            let ops = DifferenceOps::new(l2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = rand_mean_zero(&mut rng, l2 * l2);
            let a = ops.dt(1, &g.apply(&ops.d(1, &f)).unwrap());
            let b = ops.dt(2, &g.apply(&ops.d(2, &f)).unwrap());
            let id1: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            prop_assert!(max_abs_diff(&id1, &f) <= 1e-10);
            let p = ops.d(1, &g.apply(&ops.d(2, &f)).unwrap());
            let q = ops.d(2, &g.apply(&ops.d(1, &f)).unwrap());
            prop_assert!(max_abs_diff(&p, &q) <= 1e-10);
        }
    }
}
