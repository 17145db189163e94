//! Villain model on the zero-b.c. lattice against the integer-valued GFF on its planar dual.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::fields::{self, batch_means, enumerate_iv, iv_mcmc, villain_estimate, villain_l2, Estimate};
use crate::lattice::{Graph, LatticeDomain};
use crate::{Error, Result};

/// A point of the zero-b.c. lattice in extended coordinates: anything off the L×L grid is z.
pub type Pt = (i64, i64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PrimalEdge {
    pub from: Pt,
    pub to: Pt,
}

/// Dual graph of Λ_L^0 without the outer face. Dual vertex (A,B) sits at (A−½, B−½), so the
/// labeling is the one of Λ_{L+1}^free.
#[derive(Clone, Debug)]
pub struct DualLattice {
    pub l: usize,
    pub graph: LatticeDomain,
    /// Dual edges (k', ℓ') oriented per the primal orientation, aligned with `primal`.
    pub dual_oriented: Vec<(usize, usize)>,
    pub primal: Vec<PrimalEdge>,
}

pub fn dual_lattice(l: usize) -> Result<DualLattice> {
    if l < 2 {
        return Err(Error::SideTooSmall(l));
    }
    let graph = LatticeDomain::free(l + 1);
    let s = l + 1;
    let mut primal = Vec::new();
    let mut dual_oriented = Vec::new();
    for (x, y, _) in graph.edges() {
        let (a0, b0) = ((x / s) as i64, (x % s) as i64);
        let (a1, b1) = ((y / s) as i64, (y % s) as i64);
        let e = orient(l, crossing(((a0, b0), (a1, b1))));
        let (k, m) = dual_of(l, &e);
        primal.push(e);
        dual_oriented.push((k, m));
    }
    Ok(DualLattice { l, graph, dual_oriented, primal })
}

/// Primal edge crossed by the dual edge between dual vertices p and q (unoriented).
pub fn crossing((p, q): (Pt, Pt)) -> (Pt, Pt) {
    let (p, q) = (p.min(q), p.max(q));
    if p.0 == q.0 {
        // vertical dual edge at x = A−½, y = B+½ crosses the horizontal primal edge at y = B
        let (a, b) = (p.0, p.1);
        ((a - 1, b), (a, b))
    } else {
        let (a, b) = (p.0, p.1);
        ((a, b - 1), (a, b))
    }
}

fn on_grid(l: usize, p: Pt) -> bool {
    p.0 >= 0 && p.1 >= 0 && p.0 < l as i64 && p.1 < l as i64
}

/// Orientation: horizontal grid edges point left, edges z–(L−1,·) point from z, vertical edges
/// point down, the rest go from the lexicographically smaller extended point.
pub fn orient(l: usize, (p, q): (Pt, Pt)) -> PrimalEdge {
    let li = l as i64;
    let (p, q) = (p.min(q), p.max(q));
    let (gp, gq) = (on_grid(l, p), on_grid(l, q));
    if p.1 == q.1 {
        if gp && gq {
            return PrimalEdge { from: q, to: p };
        }
        if q.0 == li {
            return PrimalEdge { from: q, to: p };
        }
    } else if gp && gq {
        return PrimalEdge { from: q, to: p };
    }
    PrimalEdge { from: p, to: q }
}

/// Oriented dual edge: the primal direction rotated clockwise. Returns dual vertex indices.
pub fn dual_of(l: usize, e: &PrimalEdge) -> (usize, usize) {
    let s = (l + 1) as i64;
    let (dx, dy) = (e.to.0 - e.from.0, e.to.1 - e.from.1);
    // midpoint ×2 and the rotated half step
    let (mx, my) = (e.from.0 + e.to.0, e.from.1 + e.to.1);
    let (rx, ry) = (dy, -dx);
    // dual point (A−½, B−½) ×2 = (2A−1, 2B−1)
    let tail = ((mx - rx + 1) / 2, (my - ry + 1) / 2);
    let head = ((mx + rx + 1) / 2, (my + ry + 1) / 2);
    let idx = |p: Pt| (p.0 * s + p.1) as usize;
    (idx(tail), idx(head))
}

impl DualLattice {
    pub fn num_vertices(&self) -> usize {
        self.graph.n()
    }
    pub fn coords(&self, i: usize) -> (f64, f64) {
        let s = self.l + 1;
        ((i / s) as f64 - 0.5, (i % s) as f64 - 0.5)
    }
    /// Index of the dual vertex at (x, y) (half-integers).
    pub fn index_of(&self, x: f64, y: f64) -> Option<usize> {
        let (a, b) = ((x + 0.5).round(), (y + 0.5).round());
        let s = (self.l + 1) as f64;
        ((a - (x + 0.5)).abs() < 1e-9 && (b - (y + 0.5)).abs() < 1e-9 && (0.0..s).contains(&a) && (0.0..s).contains(&b))
            .then(|| (a * s + b) as usize)
    }
    /// Primal index of an extended point (z for anything off the grid).
    pub fn primal_index(&self, p: Pt) -> usize {
        if on_grid(self.l, p) {
            p.0 as usize * self.l + p.1 as usize
        } else {
            self.l * self.l
        }
    }
    /// Position of the primal edge crossed by a dual edge.
    pub fn edge_position(&self, a: usize, b: usize) -> Option<usize> {
        self.dual_oriented.iter().position(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
    }

    /// χ_x on the oriented primal edges.
    pub fn chi(&self, x: Pt) -> Vec<i64> {
        let li = self.l as i64;
        self.primal
            .iter()
            .map(|e| {
                let row = e.to.1 == x.1 && e.from.1 == x.1;
                if row && e.from.0 == e.to.0 + 1 && on_grid(self.l, e.from) && e.to.0 >= x.0 {
                    1
                } else if row && e.from.0 == li && e.to.0 == li - 1 {
                    1
                } else {
                    0
                }
            })
            .collect()
    }

    /// (δn)_k = Σ_{(k,ℓ)} n_{(k,ℓ)} over primal sites other than z.
    pub fn delta(&self, n: &[i64]) -> Vec<i64> {
        let mut d = vec![0i64; self.l * self.l + 1];
        for (e, &v) in self.primal.iter().zip(n) {
            d[self.primal_index(e.from)] += v;
            d[self.primal_index(e.to)] -= v;
        }
        d.truncate(self.l * self.l);
        d
    }

    /// n_{(k,ℓ)} = m_{k'} − m_{ℓ'}.
    pub fn gradient(&self, m: &[i64]) -> Vec<i64> {
        self.dual_oriented.iter().map(|&(a, b)| m[a] - m[b]).collect()
    }

    /// m with m_v = 0 and gradient n, by path integration; `None` if n is not a gradient.
    pub fn potential(&self, n: &[i64], v: usize) -> Option<Vec<i64>> {
        let nv = self.num_vertices();
        let mut adj: Vec<Vec<(usize, i64)>> = vec![Vec::new(); nv];
        for (&(a, b), &x) in self.dual_oriented.iter().zip(n) {
            adj[b].push((a, x));
            adj[a].push((b, -x));
        }
        let mut m = vec![None; nv];
        m[v] = Some(0i64);
        let mut stack = vec![v];
        while let Some(p) = stack.pop() {
            let mp = m[p].unwrap();
            for &(q, x) in &adj[p] {
                // m_q − m_p = x along the edge direction stored above
                match m[q] {
                    None => {
                        m[q] = Some(mp + x);
                        stack.push(q);
                    }
                    Some(mq) if mq != mp + x => return None,
                    _ => {}
                }
            }
        }
        m.into_iter().collect()
    }

    /// Observable weights: exp(−(1/β)Σ_t (m_lo − m_hi + ½)) = exp(⟨m,h⟩ + c), summed over the L−x₀
    /// crossings of the χ path (t = x₀, …, L−1).
    pub fn iv_observable(&self, x: Pt, beta: f64) -> (Vec<f64>, f64) {
        let mut h = vec![0.0; self.num_vertices()];
        let chi = self.chi(x);
        let mut count = 0;
        for (&(a, b), &c) in self.dual_oriented.iter().zip(&chi) {
            if c == 1 {
                h[a] -= 1.0 / beta;
                h[b] += 1.0 / beta;
                count += 1;
            }
        }
        (h, -(count as f64) / (2.0 * beta))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EdgeWeightCheck {
    pub lhs: Complex64,
    pub rhs: Complex64,
    pub tail_bound: f64,
}

/// Σ_{i≥0} e^{−c(s+i)²} for s ≥ 0, bounded by a geometric series.
fn gaussian_tail(s: f64, c: f64) -> f64 {
    (-c * s * s).exp() / (1.0 - (-c * (2.0 * s + 1.0)).exp())
}

/// Periodized e^{−βθ²/2 − iχθ} against its Fourier series (1/√(2πβ))Σ_n e^{−(n+χ)²/2β}e^{inθ}.
pub fn fourier_edge_weight(theta: f64, beta: f64, chi: f64, n_cut: usize) -> Result<EdgeWeightCheck> {
    if n_cut < 1 || !(beta > 0.0) {
        return Err(Error::PreconditionViolated("n_cut ≥ 1 and β > 0 required".into()));
    }
    let th = (theta + PI).rem_euclid(2.0 * PI) - PI;
    let nc = n_cut as i64;
    let mut lhs = Complex64::new(0.0, 0.0);
    for m in -nc..=nc {
        let t = th + 2.0 * PI * m as f64;
        lhs += Complex64::from_polar((-0.5 * beta * t * t).exp(), -chi * t);
    }
    let mut rhs = Complex64::new(0.0, 0.0);
    for n in -nc..=nc {
        let a = n as f64 + chi;
        rhs += Complex64::from_polar((-a * a / (2.0 * beta)).exp(), n as f64 * th);
    }
    rhs /= (2.0 * PI * beta).sqrt();
    // |θ + 2πm| ≥ 2π(|m| − ½); |n + χ| ≥ |n| − |χ| once |n| > |χ|
    let c1 = 0.5 * beta * 4.0 * PI * PI;
    let lt = 2.0 * gaussian_tail(nc as f64 + 0.5, c1);
    let s = (nc as f64 + 1.0 - chi.abs()).max(0.0);
    let rt = if s > 0.0 { 2.0 * gaussian_tail(s, 1.0 / (2.0 * beta)) / (2.0 * PI * beta).sqrt() } else { f64::INFINITY };
    Ok(EdgeWeightCheck { lhs, rhs, tail_bound: lt + rt })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DualityTolerances {
    pub quadrature: f64,
    pub mc_se: f64,
}

impl Default for DualityTolerances {
    fn default() -> Self {
        DualityTolerances { quadrature: 1e-6, mc_se: 4.0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityOptions {
    pub k_cut: usize,
    pub m_cut: usize,
    pub nodes: usize,
    pub seed: u64,
    pub chains: usize,
    pub sweeps: usize,
    pub burn: usize,
}

impl Default for DualityOptions {
    fn default() -> Self {
        DualityOptions { k_cut: 8, m_cut: 8, nodes: 64, seed: 0, chains: 8, sweeps: 4000, burn: 200 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    #[serde(rename = "L")]
    pub l: usize,
    pub beta: f64,
    pub x: [usize; 2],
    pub villain: Estimate,
    pub iv: Estimate,
    pub diff: f64,
    pub tolerances: DualityTolerances,
    pub villain_method: &'static str,
    pub iv_method: &'static str,
    pub pass: bool,
}

/// E^Vil_β[cos θ_x] on Λ_L^0 against E^IV_{1/β} of the dual observable on Λ_L^*, with v the
/// lexicographically smallest dual vertex.
pub fn duality_check(l: usize, beta: f64, x: (usize, usize), opt: &DualityOptions) -> Result<DualityReport> {
    if !(beta > 0.0) {
        return Err(Error::PreconditionViolated(format!("β must be positive, got {beta}")));
    }
    if x.0 >= l || x.1 >= l {
        return Err(Error::UnknownVertex(x.0 * l + x.1));
    }
    let dual = dual_lattice(l)?;
    let dom = LatticeDomain::zero(l);
    let (villain, villain_method) = if l == 2 {
        (Estimate::exact(villain_l2(beta, opt.m_cut, opt.nodes).cos), "quadrature")
    } else {
        let e = villain_estimate(&dom, beta, opt.m_cut, dom.index(x.0, x.1), opt.seed, opt.chains, opt.sweeps, opt.burn)?;
        (e.cos, "mcmc")
    };
    let (h, c) = dual.iv_observable((x.0 as i64, x.1 as i64), beta);
    let ib = 1.0 / beta;
    let (iv, iv_method) = match enumerate_iv(&dual.graph, ib, 0, opt.k_cut, &h) {
        Ok(r) if !r.flagged => (
            Estimate::exact(c.exp() * r.mean_exp),
            match r.method {
                fields::IvMethod::Transfer => "transfer",
                fields::IvMethod::Dual => "dual",
            },
        ),
        _ => {
            let xs = iv_mcmc(&dual.graph, ib, 0, opt.seed ^ 0x5eed, opt.chains, opt.sweeps, opt.burn, |m| {
                (c + h.iter().zip(m).map(|(a, b)| a * *b as f64).sum::<f64>()).exp()
            });
            (batch_means(&xs), "mcmc")
        }
    };
    let diff = villain.mean - iv.mean;
    let tol = DualityTolerances::default();
    let pass = if villain.se == 0.0 && iv.se == 0.0 {
        diff.abs() <= tol.quadrature
    } else {
        villain.z_score(iv.mean, iv.se) <= tol.mc_se
    };
    Ok(DualityReport { l, beta, x: [x.0, x.1], villain, iv, diff, tolerances: tol, villain_method, iv_method, pass })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PartitionIdentity {
    pub z_villain: f64,
    pub z_dual: f64,
    pub rel_diff: f64,
}

/// Z^Vil = (2π)^{L²}(2πβ)^{−|E|/2} Σ_{m, m_v=0} e^{−(1/2β)Σ(∇m)²} at L=2.
pub fn partition_identity_l2(beta: f64, opt: &DualityOptions) -> Result<PartitionIdentity> {
    let dual = dual_lattice(2)?;
    let zq = villain_l2(beta, opt.m_cut, opt.nodes).z;
    let r = enumerate_iv(&dual.graph, 1.0 / beta, 0, opt.k_cut, &vec![0.0; dual.num_vertices()])?;
    let ne = dual.primal.len() as f64;
    let log_pref = 4.0 * (2.0 * PI).ln() - 0.5 * ne * (2.0 * PI * beta).ln();
    let zd = (log_pref + r.log_z).exp();
    Ok(PartitionIdentity { z_villain: zq, z_dual: zd, rel_diff: (zq - zd).abs() / zq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn key(e: &PrimalEdge) -> (Pt, Pt) {
        (e.from.min(e.to), e.from.max(e.to))
    }

    #[test]
    fn dual_is_free_l_plus_one() {
        for l in 2..6 {
            let d = dual_lattice(l).unwrap();
            assert_eq!(d.num_vertices(), (l + 1) * (l + 1));
            assert_eq!(d.primal.len(), LatticeDomain::free(l + 1).edge_count());
            // bijection with the primal planar edges: 2L(L−1) inner + 4L boundary
            let keys: HashSet<_> = d.primal.iter().map(key).collect();
            assert_eq!(keys.len(), 2 * l * (l - 1) + 4 * l);
            // zero-b.c. edge multiset agrees
            let dom = LatticeDomain::zero(l);
            let mut mult = std::collections::HashMap::new();
            for e in &d.primal {
                let (a, b) = (d.primal_index(e.from), d.primal_index(e.to));
                *mult.entry((a.min(b), a.max(b))).or_insert(0u32) += 1;
            }
            for (a, b, m) in dom.edges() {
                assert_eq!(mult[&(a.min(b), a.max(b))], m);
            }
            for (i, e) in d.primal.iter().enumerate() {
                // each dual edge crosses exactly one primal edge and back
                let (p, q) = d.dual_oriented[i];
                assert_eq!(d.edge_position(p, q), Some(i));
                let s = (l + 1) as i64;
                let pp = ((p as i64) / s, (p as i64) % s);
                let qq = ((q as i64) / s, (q as i64) % s);
                assert_eq!(crossing((pp, qq)), key(e));
            }
        }
        let d = dual_lattice(2).unwrap();
        assert_eq!(d.num_vertices(), 9);
        assert_eq!(d.coords(0), (-0.5, -0.5));
        assert_eq!(d.index_of(1.5, 0.5), Some(7));
    }

    #[test]
    fn orientation_rules() {
        let d = dual_lattice(3).unwrap();
        for (e, &(a, b)) in d.primal.iter().zip(&d.dual_oriented) {
            if on_grid(3, e.from) && on_grid(3, e.to) && e.from.1 == e.to.1 {
                assert_eq!(e.from.0, e.to.0 + 1);
                // left-pointing edges have upward duals
                assert_eq!(d.coords(b).1, d.coords(a).1 + 1.0);
            }
            if e.from.0 == 3 || e.to.0 == 3 {
                assert_eq!(e.from.0, 3);
            }
            if on_grid(3, e.from) && on_grid(3, e.to) && e.from.0 == e.to.0 {
                assert_eq!(e.from.1, e.to.1 + 1);
            }
        }
    }

    #[test]
    fn chi_telescopes_to_x_minus_z() {
        let l = 4;
        let d = dual_lattice(l).unwrap();
        for x0 in 0..l as i64 {
            for x1 in 0..l as i64 {
                let chi = d.chi((x0, x1));
                assert_eq!(chi.iter().sum::<i64>(), l as i64 - x0);
                // Σ χ(θ_k − θ_ℓ) = θ_z − θ_x for any θ
                let theta: Vec<f64> = (0..=l * l).map(|i| (i as f64 * 0.37).sin()).collect();
                let s: f64 = d.primal.iter().zip(&chi).map(|(e, &c)| c as f64 * (theta[d.primal_index(e.from)] - theta[d.primal_index(e.to)])).sum();
                let xi = (x0 as usize) * l + x1 as usize;
                assert!((s - (theta[l * l] - theta[xi])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_zero_iff_gradient_l2() {
        let d = dual_lattice(2).unwrap();
        let ne = d.primal.len();
        assert_eq!(ne, 12);
        let mut n = vec![-1i64; ne];
        let mut zeros = 0;
        loop {
            let closed = d.delta(&n).iter().all(|&x| x == 0);
            let pot = d.potential(&n, 0);
            assert_eq!(closed, pot.is_some());
            if let Some(m) = pot {
                assert_eq!(m[0], 0);
                assert_eq!(d.gradient(&m), n);
                zeros += 1;
            }
            let mut i = 0;
            while i < ne && n[i] == 1 {
                n[i] = -1;
                i += 1;
            }
            if i == ne {
                break;
            }
            n[i] += 1;
        }
        assert!(zeros > 1);
    }

    #[test]
    fn fourier_identity() {
        let r = fourier_edge_weight(0.0, 1.0, 0.0, 20).unwrap();
        assert!((r.lhs - r.rhs).norm() < 1e-10);
        assert!(r.lhs.im.abs() < 1e-15);
        for &(th, b, c) in &[(0.7, 0.5, 1.0), (-2.0, 2.0, 0.3), (3.0, 0.1, -1.0), (9.0, 1.0, 0.0)] {
            let r = fourier_edge_weight(th, b, c, 25).unwrap();
            assert!((r.lhs - r.rhs).norm() <= r.tail_bound + 1e-13, "{th} {b} {c}");
            if c == 0.0 {
                let m = fourier_edge_weight(-th, b, c, 25).unwrap();
                assert!((m.lhs - r.lhs).norm() < 1e-14 && r.lhs.im.abs() < 1e-14);
            }
        }
        // concentrated on n = −round(χ) when 1/β is large
        let r = fourier_edge_weight(0.4, 0.02, 1.2, 10).unwrap();
        let lead = (-(0.2f64 * 0.2) / 0.04).exp() / (2.0 * PI * 0.02).sqrt();
        assert!((r.rhs.norm() - lead).abs() < 1e-3 * lead);
    }

    #[test]
    fn duality_l2() {
        let opt = DualityOptions::default();
        for beta in [1.0, 0.3, 3.0] {
            let r = duality_check(2, beta, (0, 0), &opt).unwrap();
            assert!(r.diff.abs() <= 1e-6, "β={beta}: {} vs {}", r.villain.mean, r.iv.mean);
            assert!(r.pass);
        }
        let r = duality_check(2, 10.0, (1, 1), &opt).unwrap();
        assert!(r.villain.mean > 0.9 && r.iv.mean > 0.9 && r.diff.abs() < 1e-6);
    }

    #[test]
    fn partition_identity() {
        for beta in [0.5, 1.0, 3.0] {
            let p = partition_identity_l2(beta, &DualityOptions::default()).unwrap();
            assert!(p.rel_diff < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn duality_l3_mcmc() {
        let opt = DualityOptions { sweeps: 3000, ..Default::default() };
        let r = duality_check(3, 1.5, (1, 1), &opt).unwrap();
        assert_eq!(r.villain_method, "mcmc");
        assert!(r.pass, "{r:?}");
    }
}
