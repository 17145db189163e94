//! Charge densities, the neighbourhoods D(ϱ)/D⁺(ϱ), multiscale square covers and the A(ϱ) functional.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{DyadicSquare, Graph, Kind, LatticeDomain};
use crate::{Error, Result};

/// Exact covers work on bitmasks over the support.
pub const EXACT_COVER_LIMIT: usize = 64;

/// Sparse integer function on vertices with nonempty support.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChargeDensity {
    entries: Vec<(usize, i64)>,
}

impl ChargeDensity {
    /// Zero entries are dropped, repeated vertices summed.
    pub fn new(dom: &LatticeDomain, entries: &[(usize, i64)]) -> Result<Self> {
        let mut m: BTreeMap<usize, i64> = BTreeMap::new();
        for &(v, q) in entries {
            if v >= dom.n() {
                return Err(Error::UnknownVertex(v));
            }
            *m.entry(v).or_insert(0) += q;
        }
        let entries: Vec<_> = m.into_iter().filter(|&(_, q)| q != 0).collect();
        if entries.is_empty() {
            return Err(Error::EmptyDensity);
        }
        Ok(ChargeDensity { entries })
    }

    pub fn from_sites(dom: &LatticeDomain, sites: &[((usize, usize), i64)]) -> Result<Self> {
        let l = dom.side();
        let mut e = Vec::with_capacity(sites.len());
        for &((a, b), q) in sites {
            if a >= l || b >= l {
                return Err(Error::UnknownVertex(a * l + b));
            }
            e.push((dom.index(a, b), q));
        }
        Self::new(dom, &e)
    }

    /// Sorted (vertex, charge) pairs.
    pub fn entries(&self) -> &[(usize, i64)] {
        &self.entries
    }
    pub fn support(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }
    pub fn get(&self, v: usize) -> i64 {
        self.entries.binary_search_by_key(&v, |e| e.0).map(|i| self.entries[i].1).unwrap_or(0)
    }
    pub fn charge(&self) -> i64 {
        self.entries.iter().map(|e| e.1).sum()
    }
    pub fn is_neutral(&self) -> bool {
        self.charge() == 0
    }
    pub fn norm2sq(&self) -> i64 {
        self.entries.iter().map(|e| e.1 * e.1).sum()
    }
    pub fn norm1(&self) -> i64 {
        self.entries.iter().map(|e| e.1.abs()).sum()
    }
    pub fn diameter(&self, dom: &LatticeDomain) -> usize {
        let s = &self.entries;
        let mut d = 0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                d = d.max(dom.dist(s[i].0, s[j].0));
            }
        }
        d
    }

    /// Dense vector over all vertices.
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for &(j, q) in &self.entries {
            v[j] = q as f64;
        }
        v
    }

    /// ⟨f, ϱ⟩.
    pub fn pair(&self, f: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, q)| q as f64 * f[j]).sum()
    }

    /// Restriction to a vertex predicate; `None` if nothing is left.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> Option<Self> {
        let e: Vec<_> = self.entries.iter().copied().filter(|&(v, _)| keep(v)).collect();
        (!e.is_empty()).then_some(ChargeDensity { entries: e })
    }

    pub fn negated(&self) -> Self {
        ChargeDensity { entries: self.entries.iter().map(|&(v, q)| (v, -q)).collect() }
    }

    /// Sum of two densities; `None` when it vanishes identically.
    pub fn add(&self, o: &Self) -> Option<Self> {
        let mut m: BTreeMap<usize, i64> = self.entries.iter().copied().collect();
        for &(v, q) in &o.entries {
            *m.entry(v).or_insert(0) += q;
        }
        let e: Vec<_> = m.into_iter().filter(|&(_, q)| q != 0).collect();
        (!e.is_empty()).then_some(ChargeDensity { entries: e })
    }

    pub fn disjoint(&self, o: &Self) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() && j < o.entries.len() {
            match self.entries[i].0.cmp(&o.entries[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        true
    }

    /// Distance between supports.
    pub fn dist_to(&self, o: &Self, dom: &LatticeDomain) -> usize {
        dom.set_dist(&self.support(), &o.support())
    }
}

/// Random density on the sites of `dom` (never on z).
pub fn random_density<R: Rng>(dom: &LatticeDomain, rng: &mut R, max_support: usize, max_abs: i64, neutral: bool) -> ChargeDensity {
    let sites = dom.num_sites();
    loop {
        let size = rng.random_range(if neutral { 2 } else { 1 }..=max_support.max(2).min(sites));
        let mut vs: Vec<usize> = Vec::with_capacity(size);
        while vs.len() < size {
            let v = rng.random_range(0..sites);
            if !vs.contains(&v) {
                vs.push(v);
            }
        }
        let mut e: Vec<(usize, i64)> = vs
            .iter()
            .map(|&v| {
                let m = rng.random_range(1..=max_abs);
                (v, if rng.random_bool(0.5) { m } else { -m })
            })
            .collect();
        if neutral {
            let q: i64 = e[..size - 1].iter().map(|x| x.1).sum();
            if q == 0 {
                continue;
            }
            e[size - 1].1 = -q;
        }
        if let Ok(d) = ChargeDensity::new(dom, &e) {
            return d;
        }
    }
}

/// Center j of D(ϱ) with D and D⁺.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Neighbourhood {
    pub center: usize,
    pub d: usize,
    pub set: Vec<usize>,
    pub plus: Vec<usize>,
}

/// Center: smallest-index support vertex realizing the diameter. D is the open ball of radius 2d,
/// or just the center when d = 0.
pub fn center_and_d(rho: &ChargeDensity, dom: &LatticeDomain) -> Neighbourhood {
    let d = rho.diameter(dom);
    let s = rho.support();
    let center = *s
        .iter()
        .find(|&&j| s.iter().any(|&k| dom.dist(j, k) == d))
        .expect("nonempty support");
    let set = if d == 0 { vec![center] } else { dom.open_ball(center, 2 * d) };
    let plus = dom.closed_neighborhood(&set);
    Neighbourhood { center, d, set, plus }
}

/// α and M of the cover machinery.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverConfig {
    pub alpha: f64,
    pub m: u64,
}

impl Default for CoverConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl CoverConfig {
    pub fn paper() -> Self {
        CoverConfig { alpha: 1.75, m: 1 << 16 }
    }
    /// Small M so separated squares occur on desk-sized lattices.
    pub fn test_scaled(m: u64) -> Self {
        CoverConfig { alpha: 1.75, m }
    }
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.5 && self.alpha < 2.0) || self.m == 0 {
            return Err(Error::PreconditionViolated(format!("need 3/2 < alpha < 2 and M > 0, got alpha={} M={}", self.alpha, self.m)));
        }
        Ok(())
    }
    pub fn log2_m(&self) -> f64 {
        (self.m as f64).log2()
    }
    pub fn b(&self) -> f64 {
        self.alpha + 3.0 + self.log2_m()
    }
    pub fn k0(&self) -> f64 {
        (self.alpha + self.b()) / (self.alpha - 1.0)
    }
    /// 2M·2^{α(k+1)}.
    pub fn sep_threshold(&self, k: u32) -> f64 {
        2.0 * self.m as f64 * (self.alpha * (k as f64 + 1.0)).exp2()
    }
    /// n(ϱ) = ⌈log₂(M d^α)⌉; 0 for d = 0.
    pub fn n_of(&self, d: usize) -> u32 {
        if d == 0 {
            return 0;
        }
        let x = self.log2_m() + self.alpha * (d as f64).log2();
        (x - 1e-12).ceil().max(0.0) as u32
    }
    /// M·d^α, the separation scale of the ensemble expansion.
    pub fn m_d_alpha(&self, d: usize) -> f64 {
        self.m as f64 * (d as f64).powf(self.alpha)
    }
}

fn require_square_domain(dom: &LatticeDomain) -> Result<()> {
    if dom.kind() == Kind::Zero {
        return Err(Error::PreconditionViolated("square covers are defined for free and periodic domains".into()));
    }
    Ok(())
}

struct Candidates {
    squares: Vec<DyadicSquare>,
    masks: Vec<u64>,
    by_point: Vec<Vec<usize>>,
    max_pop: u32,
}

/// Squares anchored at (support x, support y), deduplicated by covered set keeping the smallest anchor.
fn candidates(dom: &LatticeDomain, pts: &[usize], k: u32) -> Candidates {
    let mut xs: Vec<usize> = pts.iter().map(|&v| dom.site(v).unwrap().0).collect();
    let mut ys: Vec<usize> = pts.iter().map(|&v| dom.site(v).unwrap().1).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let mut seen: HashMap<u64, ()> = HashMap::new();
    let mut squares = Vec::new();
    let mut masks = Vec::new();
    for &a in &xs {
        for &b in &ys {
            let s = DyadicSquare::at(dom, k, a, b);
            let mask = mask_of(&s, dom, pts);
            if mask != 0 && seen.insert(mask, ()).is_none() {
                let whole = s.whole;
                squares.push(s);
                masks.push(mask);
                if whole {
                    break;
                }
            }
        }
    }
    let mut by_point = vec![Vec::new(); pts.len()];
    for (c, &m) in masks.iter().enumerate() {
        for (p, bp) in by_point.iter_mut().enumerate() {
            if m >> p & 1 == 1 {
                bp.push(c);
            }
        }
    }
    let max_pop = masks.iter().map(|m| m.count_ones()).max().unwrap_or(0);
    Candidates { squares, masks, by_point, max_pop }
}

fn mask_of(s: &DyadicSquare, dom: &LatticeDomain, pts: &[usize]) -> u64 {
    pts.iter().enumerate().fold(0u64, |m, (i, &v)| if s.contains(dom, v) { m | 1 << i } else { m })
}

struct Search<'a> {
    c: &'a Candidates,
    // mask -> largest r known to be infeasible, for the current min index
    memo: HashMap<(u64, usize), u32>,
}

impl<'a> Search<'a> {
    fn new(c: &'a Candidates) -> Self {
        Search { c, memo: HashMap::new() }
    }

    /// Can `unc` be covered by r candidates with index ≥ min_idx?
    fn can(&mut self, unc: u64, r: u32, min_idx: usize) -> bool {
        if unc == 0 {
            return true;
        }
        if r == 0 || r * self.c.max_pop < unc.count_ones() {
            return false;
        }
        if let Some(&bad) = self.memo.get(&(unc, min_idx)) {
            if r <= bad {
                return false;
            }
        }
        let p = unc.trailing_zeros() as usize;
        for i in 0..self.c.by_point[p].len() {
            let ci = self.c.by_point[p][i];
            if ci < min_idx {
                continue;
            }
            if self.can(unc & !self.c.masks[ci], r - 1, min_idx) {
                return true;
            }
        }
        let e = self.memo.entry((unc, min_idx)).or_insert(0);
        *e = (*e).max(r);
        false
    }

    fn min_size(&mut self, unc: u64) -> u32 {
        let mut r = 0;
        while !self.can(unc, r, 0) {
            r += 1;
        }
        r
    }

    /// Lexicographically smallest increasing index sequence of length r covering `unc`.
    fn lex_smallest(&mut self, mut unc: u64, r: u32) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(r as usize);
        let mut next = 0;
        for left in (0..r).rev() {
            if unc == 0 {
                break;
            }
            let mut found = None;
            for ci in next..self.c.masks.len() {
                if self.c.masks[ci] & unc == 0 {
                    continue;
                }
                if self.can(unc & !self.c.masks[ci], left, ci + 1) {
                    found = Some(ci);
                    break;
                }
            }
            let ci = found?;
            out.push(ci);
            unc &= !self.c.masks[ci];
            next = ci + 1;
        }
        (unc == 0).then_some(out)
    }
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

fn sort_squares(v: &mut [DyadicSquare]) {
    v.sort_by(|a, b| a.anchor.cmp(&b.anchor));
}

/// Exact minimum cover at scale k, lexicographically smallest anchors among minimum covers.
pub fn minimal_cover(rho: &ChargeDensity, dom: &LatticeDomain, k: u32) -> Result<Vec<DyadicSquare>> {
    Ok(cover_with_forced(rho, dom, k, &[])?.0)
}

/// Minimum cover that contains `forced` when that does not increase its size.
/// Returns (cover, whether the forced squares were honoured).
fn cover_with_forced(rho: &ChargeDensity, dom: &LatticeDomain, k: u32, forced: &[DyadicSquare]) -> Result<(Vec<DyadicSquare>, bool)> {
    require_square_domain(dom)?;
    let pts = rho.support();
    if pts.len() > EXACT_COVER_LIMIT {
        return Err(Error::SupportTooLargeForExactCover(pts.len()));
    }
    let c = candidates(dom, &pts, k);
    let full = full_mask(pts.len());
    let mut search = Search::new(&c);
    let best = search.min_size(full);
    if !forced.is_empty() {
        let mut fs: Vec<DyadicSquare> = Vec::new();
        for s in forced {
            if !fs.contains(s) {
                fs.push(s.clone());
            }
        }
        let fmask = fs.iter().fold(0u64, |m, s| m | mask_of(s, dom, &pts));
        if (fs.len() as u32) <= best {
            let rest = best - fs.len() as u32;
            if let Some(idx) = search.lex_smallest(full & !fmask, rest) {
                let mut out = fs;
                out.extend(idx.into_iter().map(|i| c.squares[i].clone()));
                sort_squares(&mut out);
                return Ok((out, true));
            }
        }
        let idx = search.lex_smallest(full, best).expect("minimum is attainable");
        let mut out: Vec<_> = idx.into_iter().map(|i| c.squares[i].clone()).collect();
        sort_squares(&mut out);
        return Ok((out, false));
    }
    let idx = search.lex_smallest(full, best).expect("minimum is attainable");
    let mut out: Vec<_> = idx.into_iter().map(|i| c.squares[i].clone()).collect();
    sort_squares(&mut out);
    Ok((out, true))
}

/// Greedy cover for supports too large for the exact search. Not certified minimal.
pub fn greedy_cover(rho: &ChargeDensity, dom: &LatticeDomain, k: u32) -> Result<Vec<DyadicSquare>> {
    require_square_domain(dom)?;
    let pts = rho.support();
    let mut left: Vec<bool> = vec![true; pts.len()];
    let mut out = Vec::new();
    while let Some(p) = left.iter().position(|&x| x) {
        let (a0, b0) = dom.site(pts[p]).unwrap();
        let mut best: Option<(usize, DyadicSquare)> = None;
        for &q in &pts {
            let (_, b) = dom.site(q).unwrap();
            let s = DyadicSquare::at(dom, k, a0, b);
            if !s.contains(dom, pts[p]) {
                continue;
            }
            let cnt = pts.iter().zip(&left).filter(|(&v, &l)| l && s.contains(dom, v)).count();
            if best.as_ref().is_none_or(|(c, _)| cnt > *c) {
                best = Some((cnt, s));
            }
        }
        let s = best.map(|b| b.1).unwrap_or_else(|| DyadicSquare::at(dom, k, a0, b0));
        for (i, &v) in pts.iter().enumerate() {
            if s.contains(dom, v) {
                left[i] = false;
            }
        }
        out.push(s);
    }
    sort_squares(&mut out);
    Ok(out)
}

/// Squares of the cover at distance ≥ 2M·2^{α(k+1)} from every other square; empty if |cover| = 1.
pub fn separated_subset(cover: &[DyadicSquare], dom: &LatticeDomain, k: u32, cfg: &CoverConfig) -> Vec<DyadicSquare> {
    if cover.len() <= 1 || k == 0 {
        return Vec::new();
    }
    let thr = cfg.sep_threshold(k);
    cover
        .iter()
        .enumerate()
        .filter(|(i, s)| cover.iter().enumerate().all(|(j, o)| j == *i || s.dist_square(o, dom) as f64 >= thr))
        .map(|(_, s)| s.clone())
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ScaleCover {
    pub k: u32,
    pub squares: Vec<DyadicSquare>,
    pub separated: Vec<DyadicSquare>,
    pub certified: bool,
}

/// S_k and S_k^sep for k = 0..=n(ϱ), built scale by scale so that 2s ∈ S_{k+1} for s ∈ S_k^sep
/// whenever that keeps S_{k+1} minimal.
#[derive(Clone, Debug, Serialize)]
pub struct MultiscaleCover {
    pub d: usize,
    pub n: u32,
    pub a: u64,
    pub scales: Vec<ScaleCover>,
    /// Scales where the doubling preference would have broken minimality.
    pub doubling_conflicts: Vec<u32>,
}

impl MultiscaleCover {
    pub fn build(rho: &ChargeDensity, dom: &LatticeDomain, cfg: &CoverConfig) -> Result<Self> {
        Self::build_to(rho, dom, cfg, None)
    }

    /// Covers up to `kmax` (default n(ϱ)).
    pub fn build_to(rho: &ChargeDensity, dom: &LatticeDomain, cfg: &CoverConfig, kmax: Option<u32>) -> Result<Self> {
        cfg.validate()?;
        require_square_domain(dom)?;
        let d = rho.diameter(dom);
        let n = cfg.n_of(d);
        let top = kmax.unwrap_or(n);
        let exact = rho.entries().len() <= EXACT_COVER_LIMIT;
        let mut scales: Vec<ScaleCover> = Vec::with_capacity(top as usize + 1);
        let mut conflicts = Vec::new();
        for k in 0..=top {
            let forced: Vec<DyadicSquare> = match scales.last() {
                Some(prev) => prev.separated.iter().map(|s| s.doubled(dom)).collect(),
                None => Vec::new(),
            };
            let squares = if exact {
                let (sq, ok) = cover_with_forced(rho, dom, k, &forced)?;
                if !ok {
                    conflicts.push(k);
                }
                sq
            } else {
                greedy_cover(rho, dom, k)?
            };
            let separated = separated_subset(&squares, dom, k, cfg);
            scales.push(ScaleCover { k, squares, separated, certified: exact });
        }
        let a = if d == 0 {
            0
        } else {
            scales.iter().take(n as usize + 1).map(|s| s.squares.len() as u64).sum()
        };
        Ok(MultiscaleCover { d, n, a, scales, doubling_conflicts: conflicts })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.squares.len()).collect()
    }
    pub fn s0(&self) -> usize {
        self.scales[0].squares.len()
    }
    pub fn separated_total(&self) -> usize {
        self.scales.iter().skip(1).map(|s| s.separated.len()).sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AReport {
    pub d: usize,
    pub n: u32,
    pub a: u64,
    pub lower: f64,
    pub s0: usize,
    pub separated_total: usize,
    pub ratio: f64,
    pub d1: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
}

/// A(ϱ), its lower bound log₂(d+1) and the upper-bound terms against D₁.
pub fn a_functional(rho: &ChargeDensity, dom: &LatticeDomain, cfg: &CoverConfig, d1: f64) -> Result<AReport> {
    let mc = MultiscaleCover::build(rho, dom, cfg)?;
    Ok(a_report(&mc, d1))
}

pub fn a_report(mc: &MultiscaleCover, d1: f64) -> AReport {
    let lower = ((mc.d + 1) as f64).log2();
    let s0 = mc.s0();
    let sep = mc.separated_total();
    let ratio = mc.a as f64 / (s0 + sep) as f64;
    AReport {
        d: mc.d,
        n: mc.n,
        a: mc.a,
        lower,
        s0,
        separated_total: sep,
        ratio,
        d1,
        lower_holds: mc.d == 0 || lower <= mc.a as f64,
        upper_holds: ratio <= d1,
    }
}

/// γ(k) = ⌊(k−b)/α⌋ for k ≥ b.
pub fn gamma(cfg: &CoverConfig, k: i64) -> Option<i64> {
    let b = cfg.b();
    ((k as f64) >= b).then(|| ((k as f64 - b) / cfg.alpha).floor() as i64)
}

/// ℓ(k): the largest m with γ^m(k) ≥ 0.
pub fn ell(cfg: &CoverConfig, k: i64) -> u32 {
    let mut m = 0;
    let mut cur = k;
    while let Some(g) = gamma(cfg, cur) {
        if g < 0 {
            break;
        }
        cur = g;
        m += 1;
    }
    m
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop21Constants {
    pub alpha: f64,
    pub m: u64,
    pub b: f64,
    pub k0: f64,
    pub kmax: i64,
    pub gamma: Vec<Option<i64>>,
    pub ell: Vec<u32>,
    /// Sandwich bounds on γ^m(k) and the ℓ(k) lower bound hold on the whole table.
    pub sandwich_ok: bool,
    /// ℓ(k) ≥ ⌊log₂(k/k0)/log₂α⌋ for k ≥ k0.
    pub ell_lower_ok: bool,
    /// Table entries where ℓ(k) is below the unfloored log₂(k/k0)/log₂α.
    pub ell_unfloored_violations: usize,
    /// Largest observed |N_{m,j}| / (α^m·2α/(α−1)) over complete level sets in the table.
    pub n_mj_worst_ratio: f64,
    pub sum_2_pow_neg_ell_partial: f64,
    pub sum_2_pow_neg_ell_tail: f64,
    /// Σ_k 2^{−ℓ(k)} upper bound (partial sum plus tail bound).
    pub s1: f64,
    /// 4α²/((α−1)(2−α)).
    pub s2: f64,
    pub d1: f64,
}

pub fn prop21_constants(cfg: &CoverConfig) -> Prop21Constants {
    prop21_constants_to(cfg, 2048)
}

pub fn prop21_constants_to(cfg: &CoverConfig, kmax: i64) -> Prop21Constants {
    let al = cfg.alpha;
    let b = cfg.b();
    let k0 = cfg.k0();
    let gam: Vec<Option<i64>> = (0..=kmax).map(|k| gamma(cfg, k)).collect();
    let ells: Vec<u32> = (0..=kmax).map(|k| ell(cfg, k)).collect();
    let mut sandwich_ok = true;
    let mut ell_lower_ok = true;
    let mut ell_unfloored_violations = 0usize;
    let p = 1.0 / al.log2();
    let tol = 1e-9;
    for k in 0..=kmax {
        let kf = k as f64;
        if kf >= b {
            let mut cur = k;
            for m in 0..=ells[k as usize] {
                let am = al.powi(-(m as i32));
                let geo: f64 = (1..=m).map(|j| al.powi(-(j as i32))).sum();
                let geo0: f64 = (0..m).map(|j| al.powi(-(j as i32))).sum();
                let upper = am * kf - b * geo;
                let mid = am * kf - b * geo - geo0;
                let low = am * kf - k0;
                let g = cur as f64;
                if !(low <= mid + tol && mid <= g + tol && g <= upper + tol) {
                    sandwich_ok = false;
                }
                if m < ells[k as usize] {
                    cur = gamma(cfg, cur).unwrap();
                }
            }
        }
        if kf >= k0 {
            let x = (kf / k0).log2() / al.log2();
            if (ells[k as usize] as f64) < (x + tol).floor() {
                ell_lower_ok = false;
            }
            if (ells[k as usize] as f64) < x - tol {
                ell_unfloored_violations += 1;
            }
        }
    }
    // level sets N_{m,j}: γ^m is nondecreasing, so a level set is complete once γ^m(kmax) > j
    let mut counts: HashMap<(u32, i64), i64> = HashMap::new();
    for k in 0..=kmax {
        let mut cur = k;
        for m in 1..=ells[k as usize] {
            cur = gamma(cfg, cur).unwrap();
            *counts.entry((m, cur)).or_insert(0) += 1;
        }
    }
    let mut top_of = HashMap::new();
    {
        let mut cur = kmax;
        for m in 1..=ells[kmax as usize] {
            cur = gamma(cfg, cur).unwrap();
            top_of.insert(m, cur);
        }
    }
    let mut worst: f64 = 0.0;
    for (&(m, j), &c) in &counts {
        if top_of.get(&m).is_some_and(|&t| t > j) {
            let bound = al.powi(m as i32) * 2.0 * al / (al - 1.0);
            worst = worst.max(c as f64 / bound);
        }
    }
    let partial: f64 = ells.iter().map(|&l| (-(l as f64)).exp2()).sum();
    // ℓ(k) ≥ ⌊p·log₂(k/k0)⌋ gives 2^{−ℓ(k)} ≤ 2(k0/k)^p, so Σ_{k>K} ≤ 2k0^p K^{1−p}/(p−1)
    let kk = kmax as f64;
    let tail = 2.0 * k0.powf(p) * kk.powf(1.0 - p) / (p - 1.0);
    let s1 = partial + tail;
    let s2 = 4.0 * al * al / ((al - 1.0) * (2.0 - al));
    Prop21Constants {
        alpha: al,
        m: cfg.m,
        b,
        k0,
        kmax,
        gamma: gam,
        ell: ells,
        sandwich_ok,
        ell_lower_ok,
        ell_unfloored_violations,
        n_mj_worst_ratio: worst,
        sum_2_pow_neg_ell_partial: partial,
        sum_2_pow_neg_ell_tail: tail,
        s1,
        s2,
        d1: s1.max(s2),
    }
}

/// Integer edge weights c with ⟨σ,ϱ⟩ = Σ c_{jℓ}(σ_j − σ_ℓ), keyed by (j,ℓ) with j < ℓ.
/// Built by pairing unit positive and negative charges along shortest paths.
pub fn neutral_edge_decomposition(rho: &ChargeDensity, dom: &LatticeDomain) -> Result<BTreeMap<(usize, usize), i64>> {
    let q = rho.charge();
    if q != 0 {
        return Err(Error::NotNeutral(q));
    }
    let mut pos: Vec<(usize, i64)> = rho.entries().iter().filter(|e| e.1 > 0).copied().collect();
    let mut neg: Vec<(usize, i64)> = rho.entries().iter().filter(|e| e.1 < 0).map(|&(v, c)| (v, -c)).collect();
    let mut c: BTreeMap<(usize, usize), i64> = BTreeMap::new();
    let mut nb = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < pos.len() && j < neg.len() {
        let t = pos[i].1.min(neg[j].1);
        let (src, dst) = (pos[i].0, neg[j].0);
        let mut u = src;
        while u != dst {
            nb.clear();
            dom.neighbors_into(u, &mut nb);
            let du = dom.dist(u, dst);
            let w = nb.iter().map(|e| e.0).filter(|&w| dom.dist(w, dst) + 1 == du).min().expect("a neighbour closer to the target");
            let (key, sign) = if u < w { ((u, w), 1) } else { ((w, u), -1) };
            *c.entry(key).or_insert(0) += sign * t;
            u = w;
        }
        pos[i].1 -= t;
        neg[j].1 -= t;
        if pos[i].1 == 0 {
            i += 1;
        }
        if neg[j].1 == 0 {
            j += 1;
        }
    }
    c.retain(|_, v| *v != 0);
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_min_cover(rho: &ChargeDensity, dom: &LatticeDomain, k: u32) -> usize {
        let pts = rho.support();
        let mut masks: Vec<u64> = dom.enumerate_squares(k).iter().map(|s| mask_of(s, dom, &pts)).filter(|&m| m != 0).collect();
        masks.sort_unstable();
        masks.dedup();
        let full = full_mask(pts.len());
        // BFS over reachable unions
        let mut frontier = vec![0u64];
        let mut seen = std::collections::HashSet::new();
        for r in 1.. {
            let mut next = Vec::new();
            for &f in &frontier {
                for &m in &masks {
                    let u = f | m;
                    if u == full {
                        return r;
                    }
                    if seen.insert(u) {
                        next.push(u);
                    }
                }
            }
            frontier = next;
        }
        unreachable!()
    }

    #[test]
    fn basic_quantities() {
        let dom = LatticeDomain::free(4);
        let r = ChargeDensity::from_sites(&dom, &[((0, 0), 2), ((3, 3), -1), ((1, 0), -1)]).unwrap();
        assert_eq!(r.charge(), 0);
        assert_eq!(r.norm2sq(), 6);
        assert_eq!(r.norm1(), 4);
        assert_eq!(r.diameter(&dom), 6);
        assert_eq!(ChargeDensity::new(&dom, &[(0, 1), (0, -1)]), Err(Error::EmptyDensity));
    }

    #[test]
    fn neighbourhood_examples() {
        let dom = LatticeDomain::free(6);
        let single = ChargeDensity::from_sites(&dom, &[((2, 2), 1)]).unwrap();
        let nb = center_and_d(&single, &dom);
        assert_eq!(nb.set, vec![dom.index(2, 2)]);
        assert_eq!(nb.plus.len(), 5);
        let dip = ChargeDensity::from_sites(&dom, &[((2, 3), -1), ((2, 2), 1)]).unwrap();
        let nb = center_and_d(&dip, &dom);
        assert_eq!(nb.center, dom.index(2, 2));
        assert_eq!(nb.set, dom.open_ball(dom.index(2, 2), 2));
        assert_eq!(nb.set.len(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r = random_density(&dom, &mut rng, 6, 3, true);
            let nb = center_and_d(&r, &dom);
            assert!(r.support().iter().all(|v| nb.set.contains(v)));
        }
    }

    #[test]
    fn cover_examples() {
        let dom = LatticeDomain::free(8);
        let dip = ChargeDensity::from_sites(&dom, &[((3, 3), 1), ((3, 4), -1)]).unwrap();
        assert_eq!(minimal_cover(&dip, &dom, 0).unwrap().len(), 2);
        assert_eq!(minimal_cover(&dip, &dom, 1).unwrap().len(), 1);
        let corners = ChargeDensity::from_sites(&dom, &[((0, 0), 1), ((0, 7), -1), ((7, 0), 1), ((7, 7), -1)]).unwrap();
        assert_eq!(minimal_cover(&corners, &dom, 2).unwrap().len(), 4);
        assert_eq!(minimal_cover(&corners, &dom, 3).unwrap().len(), 1);
        assert_eq!(minimal_cover(&corners, &dom, 4).unwrap(), vec![DyadicSquare::whole(&dom, 4)]);
        let zdom = LatticeDomain::zero(4);
        let z = ChargeDensity::new(&zdom, &[(0, 1), (1, -1)]).unwrap();
        assert!(minimal_cover(&z, &zdom, 1).is_err());
    }

    #[test]
    fn periodic_wrap_cover() {
        let dom = LatticeDomain::periodic(8);
        let r = ChargeDensity::from_sites(&dom, &[((0, 0), 1), ((7, 7), -1)]).unwrap();
        let c = minimal_cover(&r, &dom, 1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].anchor, (7, 7));
    }

    #[test]
    fn exact_cover_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dom in [LatticeDomain::free(6), LatticeDomain::periodic(6), LatticeDomain::free(9)] {
            for _ in 0..40 {
                let r = random_density(&dom, &mut rng, 12, 2, false);
                for k in 0..4 {
                    let c = minimal_cover(&r, &dom, k).unwrap();
                    assert_eq!(c.len(), brute_min_cover(&r, &dom, k), "{dom:?} k={k} {r:?}");
                    for v in r.support() {
                        assert!(c.iter().any(|s| s.contains(&dom, v)));
                    }
                }
            }
        }
    }

    #[test]
    fn single_square_above_log_diameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dom in [LatticeDomain::free(16), LatticeDomain::periodic(16)] {
            for _ in 0..50 {
                let r = random_density(&dom, &mut rng, 8, 2, false);
                let d = r.diameter(&dom);
                let k0 = ((d + 1) as f64).log2().ceil() as u32;
                for k in k0..k0 + 3 {
                    assert_eq!(minimal_cover(&r, &dom, k).unwrap().len(), 1);
                }
                assert_eq!(minimal_cover(&r, &dom, 0).unwrap().len(), r.support().len());
            }
        }
    }

    #[test]
    fn dipole_a_is_18() {
        let dom = LatticeDomain::free(8);
        let dip = ChargeDensity::from_sites(&dom, &[((3, 3), 1), ((3, 4), -1)]).unwrap();
        let cfg = CoverConfig::paper();
        let rep = a_functional(&dip, &dom, &cfg, 100.0).unwrap();
        assert_eq!(rep.n, 16);
        assert_eq!(rep.a, 18);
        assert!(rep.lower_holds);
        let single = ChargeDensity::from_sites(&dom, &[((3, 3), 1)]).unwrap();
        assert_eq!(a_functional(&single, &dom, &cfg, 100.0).unwrap().a, 0);
    }

    #[test]
    fn separation() {
        let dom = LatticeDomain::free(64);
        let adj = ChargeDensity::from_sites(&dom, &[((3, 3), 1), ((3, 4), -1)]).unwrap();
        let cfg = CoverConfig::test_scaled(2);
        for k in 1..4 {
            let c = minimal_cover(&adj, &dom, k).unwrap();
            assert!(separated_subset(&c, &dom, k, &cfg).is_empty());
        }
        // threshold at k=1, M=2: 4·2^{3.5} ≈ 45.3
        let far = ChargeDensity::from_sites(&dom, &[((0, 0), 1), ((0, 1), 1), ((50, 50), -2)]).unwrap();
        let c = minimal_cover(&far, &dom, 1).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(separated_subset(&c, &dom, 1, &cfg).len(), 2);
        assert!(separated_subset(&c, &dom, 1, &CoverConfig::paper()).is_empty());
        let mc = MultiscaleCover::build(&far, &dom, &cfg).unwrap();
        // doubling preference honoured at k=2
        for s in &mc.scales[1].separated {
            assert!(mc.scales[2].squares.contains(&s.doubled(&dom)));
        }
        assert!(mc.doubling_conflicts.is_empty());
    }

    #[test]
    fn prop21_table() {
        let p = prop21_constants(&CoverConfig::paper());
        assert!((p.b - 20.75).abs() < 1e-12);
        assert!((p.k0 - 30.0).abs() < 1e-12);
        assert!((p.s2 - 196.0 / 3.0).abs() < 1e-9);
        assert!(p.sandwich_ok && p.ell_lower_ok);
        assert!(p.n_mj_worst_ratio <= 1.0 && p.n_mj_worst_ratio > 0.0);
        for k in 0..=2048i64 {
            if let Some(g) = p.gamma[k as usize] {
                let x = (k as f64 - p.b) / p.alpha;
                assert!(g as f64 <= x && x < g as f64 + 1.0);
            }
        }
        // ℓ vanishes below b, not below k0
        assert!((0..21).all(|k| p.ell[k] == 0));
        assert_eq!(p.ell[21], 1);
        assert_eq!(p.ell[57], 1);
        assert!(p.ell_unfloored_violations > 0);
        assert!(p.d1.is_finite() && p.d1 >= p.s2);
    }

    #[test]
    fn edge_decomposition_examples() {
        let dom = LatticeDomain::free(5);
        let a = dom.index(1, 1);
        let b = dom.index(1, 2);
        let dip = ChargeDensity::new(&dom, &[(a, 1), (b, -1)]).unwrap();
        let c = neutral_edge_decomposition(&dip, &dom).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[&(a, b)], 1);
        let quad = ChargeDensity::from_sites(&dom, &[((0, 0), 1), ((0, 1), -2), ((0, 2), 1)]).unwrap();
        let c = neutral_edge_decomposition(&quad, &dom).unwrap();
        assert!(c.values().all(|v| v.abs() * 2 <= quad.norm1()));
        let charged = ChargeDensity::from_sites(&dom, &[((0, 0), 1)]).unwrap();
        assert_eq!(neutral_edge_decomposition(&charged, &dom), Err(Error::NotNeutral(1)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn edge_decomposition_reconstructs(seed in any::<u64>(), kind in 0u8..3) {
            let dom = match kind { 0 => LatticeDomain::free(7), 1 => LatticeDomain::periodic(6), _ => LatticeDomain::zero(5) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_density(&dom, &mut rng, 6, 3, true);
            let c = neutral_edge_decomposition(&r, &dom).unwrap();
            let nb = center_and_d(&r, &dom);
            for (&(j, l), &v) in &c {
                prop_assert!(nb.set.contains(&j) && nb.set.contains(&l));
                prop_assert!(2 * v.abs() <= r.norm1());
                prop_assert!(dom.dist(j, l) == 1);
            }
            for _ in 0..20 {
                let s: Vec<f64> = (0..dom.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let lhs = r.pair(&s);
                let rhs: f64 = c.iter().map(|(&(j, l), &v)| v as f64 * (s[j] - s[l])).sum();
                prop_assert!((lhs - rhs).abs() <= 1e-12);
            }
        }

        #[test]
        fn a_lower_bound_holds(seed in any::<u64>()) {
            let dom = LatticeDomain::free(32);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_density(&dom, &mut rng, 8, 3, false);
            let rep = a_functional(&r, &dom, &CoverConfig::paper(), 1e9).unwrap();
            prop_assert!(rep.lower_holds);
            prop_assert_eq!(rep.s0, r.support().len());
        }

        #[test]
        fn separated_covers_test_scaled(seed in any::<u64>(), m in prop::sample::select(vec![2u64, 4, 8])) {
            let dom = LatticeDomain::free(96);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_density(&dom, &mut rng, 6, 2, false);
            let cfg = CoverConfig::test_scaled(m);
            let mc = MultiscaleCover::build_to(&r, &dom, &cfg, Some(7)).unwrap();
            for sc in &mc.scales {
                if sc.squares.len() == 1 { prop_assert!(sc.separated.is_empty()); }
                for s in &sc.separated {
                    prop_assert!(sc.squares.contains(s));
                    for o in &sc.squares {
                        if o != s { prop_assert!(s.dist_square(o, &dom) as f64 >= cfg.sep_threshold(sc.k)); }
                    }
                }
            }
        }
    }
}
