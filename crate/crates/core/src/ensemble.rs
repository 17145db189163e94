//! Ensembles of disjoint charge densities, the trigonometric merge, k-ensemble expansion and the
//! multiscale renormalization that turns Π_j λ_j(ψ_j) into a mixture of neutral-density products.

use std::collections::HashMap;

use serde::Serialize;

use crate::density::{center_and_d, ChargeDensity, CoverConfig, MultiscaleCover};
use crate::lattice::LatticeDomain;
use crate::weights::TrigWeight;
use crate::{Error, Result};

/// A density with its coefficient and bookkeeping.
#[derive(Clone, Debug, Serialize)]
pub struct Member {
    pub rho: ChargeDensity,
    pub k: f64,
    pub d: usize,
    /// Signs ε against the densities of the input ensemble, by input index.
    pub parts: Vec<(usize, i8)>,
    /// Factors of 3 picked up from merges.
    pub threes: u32,
    /// Scale at which the density entered 𝒢 (renormalization only).
    pub g_level: Option<u32>,
}

impl Member {
    pub fn new(dom: &LatticeDomain, rho: ChargeDensity, k: f64, idx: usize) -> Self {
        let d = rho.diameter(dom);
        Member { rho, k, d, parts: vec![(idx, 1)], threes: 0, g_level: None }
    }
    pub fn factor(&self, psi: &[f64]) -> f64 {
        1.0 + self.k * self.rho.pair(psi).cos()
    }
}

/// Σ over terms c·Π(1+K cos⟨ψ,ϱ⟩).
#[derive(Clone, Debug, Serialize)]
pub struct Term {
    pub c: f64,
    pub members: Vec<Member>,
    /// Merge branch taken at each application of the trigonometric identity (0..4).
    pub path: Vec<u8>,
}

impl Term {
    pub fn product(&self, psi: &[f64]) -> f64 {
        evaluate_ensemble_product(&self.members, psi)
    }
}

pub fn evaluate_ensemble_product(members: &[Member], psi: &[f64]) -> f64 {
    members.iter().map(|m| m.factor(psi)).product()
}

pub fn mixture_value(terms: &[Term], psi: &[f64]) -> f64 {
    terms.iter().map(|t| t.c * t.product(psi)).sum()
}

/// Σ|c·Π(1+K cos⟨ψ,ϱ⟩)|, the floating-point scale of `mixture_value`.
pub fn mixture_abs_mass(terms: &[Term], psi: &[f64]) -> f64 {
    terms.iter().map(|t| (t.c * t.product(psi)).abs()).sum()
}

/// |lhs − rhs| over max(|lhs|, mass of the summands).
pub fn relative_residual(lhs: f64, rhs: f64, mass: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(mass).max(f64::MIN_POSITIVE)
}

pub fn validate_ensemble(members: &[Member]) -> Result<()> {
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            if !members[i].rho.disjoint(&members[j].rho) {
                return Err(Error::OverlappingSupports);
            }
        }
    }
    Ok(())
}

/// Pairwise distances exceed 2^k (k = −1 allowed).
pub fn is_k_ensemble(members: &[Member], dom: &LatticeDomain, k: i32) -> bool {
    let thr = if k < 0 { 0 } else { 1usize << k };
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            if members[i].rho.dist_to(&members[j].rho, dom) <= thr {
                return false;
            }
        }
    }
    true
}

/// (1+K₁cos⟨ψ,ϱ₁⟩)(1+K₂cos⟨ψ,ϱ₂⟩) as four weighted terms (weight, K, ϱ).
pub fn trig_merge(k1: f64, r1: &ChargeDensity, k2: f64, r2: &ChargeDensity) -> Result<[(f64, f64, ChargeDensity); 4]> {
    if !r1.disjoint(r2) {
        return Err(Error::OverlappingSupports);
    }
    let diff = r1.add(&r2.negated()).expect("disjoint supports");
    let sum = r1.add(r2).expect("disjoint supports");
    Ok([
        (1.0 / 3.0, 3.0 * k1, r1.clone()),
        (1.0 / 3.0, 3.0 * k2, r2.clone()),
        (1.0 / 6.0, 3.0 * k1 * k2, diff),
        (1.0 / 6.0, 3.0 * k1 * k2, sum),
    ])
}

fn merge_members(dom: &LatticeDomain, a: &Member, b: &Member, branch: u8) -> Member {
    match branch {
        0 => Member { k: 3.0 * a.k, threes: a.threes + 1, ..a.clone() },
        1 => Member { k: 3.0 * b.k, threes: b.threes + 1, ..b.clone() },
        _ => {
            let sign: i8 = if branch == 2 { -1 } else { 1 };
            let rb = if sign < 0 { b.rho.negated() } else { b.rho.clone() };
            let rho = a.rho.add(&rb).expect("disjoint supports");
            let mut parts = a.parts.clone();
            parts.extend(b.parts.iter().map(|&(i, e)| (i, e * sign)));
            parts.sort_unstable();
            Member {
                d: rho.diameter(dom),
                rho,
                k: 3.0 * a.k * b.k,
                parts,
                threes: a.threes + b.threes + 1,
                g_level: None,
            }
        }
    }
}

const BRANCH_WEIGHT: [f64; 4] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];

/// Closest pair at distance ≤ 2^k: smallest (dist, support, support).
fn closest_violation(members: &[Member], dom: &LatticeDomain, k: u32) -> Option<(usize, usize)> {
    let thr = 1usize << k;
    let mut best: Option<(usize, Vec<usize>, Vec<usize>, usize, usize)> = None;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            let d = members[i].rho.dist_to(&members[j].rho, dom);
            if d > thr {
                continue;
            }
            let (si, sj) = (members[i].rho.support(), members[j].rho.support());
            let (lo, hi, a, b) = if si <= sj { (si, sj, i, j) } else { (sj, si, j, i) };
            let better = match &best {
                None => true,
                Some((bd, bl, bh, _, _)) => (d, &lo, &hi) < (*bd, bl, bh),
            };
            if better {
                best = Some((d, lo, hi, a, b));
            }
        }
    }
    best.map(|b| (b.3, b.4))
}

/// Counters checked while expanding.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ExpansionStats {
    pub terms: u64,
    pub merges: u64,
    /// Output densities whose 3-count exceeded the number of input densities within 2^k.
    pub three_count_violations: u64,
    /// Same against 100·A_{k−1}(ϱ) (only checked when the input is a (k−1)-ensemble).
    pub c1_violations: u64,
    pub c1_checked: u64,
    pub max_three_ratio: f64,
}

/// Cache of |S_k(ϱ)|.
#[derive(Default)]
pub struct CoverCache {
    map: HashMap<(ChargeDensity, u32), usize>,
}

impl CoverCache {
    pub fn size(&mut self, rho: &ChargeDensity, dom: &LatticeDomain, k: u32) -> usize {
        if let Some(&v) = self.map.get(&(rho.clone(), k)) {
            return v;
        }
        let v = crate::density::minimal_cover(rho, dom, k).map(|c| c.len()).unwrap_or(rho.entries().len());
        self.map.insert((rho.clone(), k), v);
        v
    }
}

/// Lemma-4.1 expansion into k-ensembles, streamed to `sink(c, path, members)`.
/// `members` must be the input ensemble; their `threes` are treated as the baseline.
pub fn expand_to_k_ensemble(
    input: &[Member],
    dom: &LatticeDomain,
    k: u32,
    check_c1: Option<&mut CoverCache>,
    stats: &mut ExpansionStats,
    sink: &mut dyn FnMut(f64, &[u8], Vec<Member>),
) -> Result<()> {
    validate_ensemble(input)?;
    let input: &[Member] = &input.iter().enumerate().map(|(i, m)| Member { parts: vec![(i, 1)], ..m.clone() }).collect::<Vec<_>>();
    let base: Vec<u32> = input.iter().map(|m| m.threes).collect();
    let prior_k_ensemble = k == 0 || is_k_ensemble(input, dom, k as i32 - 1);
    let mut cache = check_c1;
    let mut path = Vec::new();
    rec_expand(dom, k, 1.0, input.to_vec(), &mut path, stats, &mut |c, p, ms: Vec<Member>, st: &mut ExpansionStats| {
        st.terms += 1;
        for m in &ms {
            let added = m.threes - m.parts.iter().map(|&(i, _)| base[i]).sum::<u32>();
            if added == 0 {
                continue;
            }
            let thr = 1usize << k;
            let n_e = input.iter().filter(|x| x.rho.dist_to(&m.rho, dom) <= thr).count() as u32;
            if added > n_e {
                st.three_count_violations += 1;
            }
            if let (true, Some(cc)) = (prior_k_ensemble, cache.as_deref_mut()) {
                let a_prev = cc.size(&m.rho, dom, k.saturating_sub(1));
                st.c1_checked += 1;
                st.max_three_ratio = st.max_three_ratio.max(added as f64 / a_prev as f64);
                if added as usize > 100 * a_prev {
                    st.c1_violations += 1;
                }
            }
        }
        sink(c, p, ms);
    });
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rec_expand(
    dom: &LatticeDomain,
    k: u32,
    c: f64,
    members: Vec<Member>,
    path: &mut Vec<u8>,
    stats: &mut ExpansionStats,
    sink: &mut dyn FnMut(f64, &[u8], Vec<Member>, &mut ExpansionStats),
) {
    match closest_violation(&members, dom, k) {
        None => sink(c, path, members, stats),
        Some((i, j)) => {
            stats.merges += 1;
            for branch in 0..4u8 {
                let merged = merge_members(dom, &members[i], &members[j], branch);
                let mut next: Vec<Member> = Vec::with_capacity(members.len() - 1);
                for (t, m) in members.iter().enumerate() {
                    if t == i {
                        next.push(merged.clone());
                    } else if t != j {
                        next.push(m.clone());
                    }
                }
                path.push(branch);
                rec_expand(dom, k, c * BRANCH_WEIGHT[branch as usize], next, path, stats, sink);
                path.pop();
            }
        }
    }
}

/// ξ(q⃗) with the single-site ensemble {q_j δ_j} and coefficients z_j(q_j).
#[derive(Clone, Debug, Serialize)]
pub struct SiteTerm {
    pub xi: f64,
    /// (vertex, q_j, z_j(q_j)); sites with constant weight are omitted.
    pub sites: Vec<(usize, i64, f64)>,
}

/// C(N) = Σ_{q=1}^N e^{−q²}.
pub fn c_of(n: usize) -> f64 {
    (1..=n).map(|q| (-((q * q) as f64)).exp()).sum()
}

/// Exact expansion Π_j λ_j = Σ_q⃗ ξ(q⃗) Π_j[1 + z_j cos(q_j ψ_j)] for up to 2^20 vectors q⃗.
pub fn weights_to_density_mixture(weights: &[TrigWeight]) -> Result<Vec<SiteTerm>> {
    let active: Vec<usize> = (0..weights.len()).filter(|&j| weights[j].degree() > 0).collect();
    let count: f64 = active.iter().map(|&j| weights[j].degree() as f64).product();
    if count > (1u64 << 20) as f64 {
        return Err(Error::StateSpaceTooLarge(count));
    }
    let mut out = vec![SiteTerm { xi: 1.0, sites: Vec::new() }];
    for &j in &active {
        let n = weights[j].degree();
        let c = c_of(n);
        let mut next = Vec::with_capacity(out.len() * n);
        for t in &out {
            for q in 1..=n {
                let qf = (q * q) as f64;
                let z = 2.0 * c * qf.exp() * weights[j].hat(q as i64);
                let mut sites = t.sites.clone();
                sites.push((j, q as i64, z));
                next.push(SiteTerm { xi: t.xi * (-qf).exp() / c, sites });
            }
        }
        out = next;
    }
    Ok(out)
}

pub fn site_term_value(t: &SiteTerm, psi: &[f64]) -> f64 {
    t.sites.iter().map(|&(j, q, z)| 1.0 + z * (q as f64 * psi[j]).cos()).product()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RenormConfig {
    pub cover: CoverConfig,
    pub k_max: u32,
    /// Lossy mode: drop terms with c below this. `None` in verification runs.
    pub prune_below: Option<f64>,
    /// Check Lemma 4.1's 3-count against 100·A_{k−1}.
    pub check_c1: bool,
}

impl RenormConfig {
    pub fn new(cover: CoverConfig) -> Self {
        RenormConfig { cover, k_max: 128, prune_below: None, check_c1: false }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RenormStats {
    pub expansion: ExpansionStats,
    pub terms: u64,
    pub pruned: u64,
    pub max_level: u32,
    /// Neutral densities with M·d^α ≤ 2^k found outside 𝒢_k.
    pub claim43_violations: u64,
}

/// Renormalization of one q⃗: streams final ensembles (𝒬_k at termination) to `sink`.
pub fn run_renormalization_stream(
    dom: &LatticeDomain,
    sites: &[(usize, i64, f64)],
    cfg: &RenormConfig,
    stats: &mut RenormStats,
    sink: &mut dyn FnMut(Term),
) -> Result<()> {
    cfg.cover.validate()?;
    let init: Vec<Member> = sites
        .iter()
        .enumerate()
        .map(|(i, &(v, q, z))| Member::new(dom, ChargeDensity::new(dom, &[(v, q)]).expect("nonzero charge"), z, i))
        .collect();
    let mut path = Vec::new();
    renorm_level(dom, cfg, 1.0, init, 0, &mut path, stats, sink)
}

#[allow(clippy::too_many_arguments)]
fn renorm_level(
    dom: &LatticeDomain,
    cfg: &RenormConfig,
    c: f64,
    q: Vec<Member>,
    k: u32,
    path: &mut Vec<u8>,
    stats: &mut RenormStats,
    sink: &mut dyn FnMut(Term),
) -> Result<()> {
    let open: Vec<usize> = (0..q.len()).filter(|&i| q[i].g_level.is_none()).collect();
    let done = open.is_empty() || (open.len() == 1 && !q[open[0]].rho.is_neutral());
    if done {
        stats.terms += 1;
        stats.max_level = stats.max_level.max(k);
        sink(Term { c, members: q, path: path.clone() });
        return Ok(());
    }
    if k > cfg.k_max {
        return Err(Error::NonTermination(k));
    }
    let g: Vec<Member> = q.iter().filter(|m| m.g_level.is_some()).cloned().collect();
    let e: Vec<Member> = open.iter().map(|&i| q[i].clone()).collect();
    let mut children: Vec<(f64, Vec<u8>, Vec<Member>)> = Vec::new();
    if e.len() >= 2 {
        let mut cc = CoverCache::default();
        let chk = if cfg.check_c1 { Some(&mut cc) } else { None };
        let mut local = std::mem::take(&mut stats.expansion);
        expand_to_k_ensemble(&e, dom, k, chk, &mut local, &mut |cc, p, ms| {
            children.push((cc, p.to_vec(), ms));
        })?;
        stats.expansion = local;
        // parts come back relative to `e`; map them to the original sites
        for (_, _, ms) in children.iter_mut() {
            for m in ms.iter_mut() {
                let mut parts = Vec::new();
                for &(i, s) in &m.parts {
                    parts.extend(e[i].parts.iter().map(|&(o, t)| (o, t * s)));
                }
                parts.sort_unstable();
                m.parts = parts;
            }
        }
    } else {
        children.push((1.0, Vec::new(), e));
    }
    for (cw, p, ms) in children {
        let cnew = c * cw;
        if let Some(thr) = cfg.prune_below {
            if cnew < thr {
                stats.pruned += 1;
                continue;
            }
        }
        let mut qk: Vec<Member> = g.clone();
        qk.extend(ms);
        update_g(dom, &cfg.cover, &mut qk, k);
        for m in &qk {
            if m.rho.is_neutral() && m.g_level.is_none() && cfg.cover.m_d_alpha(m.d) <= (k as f64).exp2() {
                stats.claim43_violations += 1;
            }
        }
        let plen = path.len();
        path.extend_from_slice(&p);
        renorm_level(dom, cfg, cnew, qk, k + 1, path, stats, sink)?;
        path.truncate(plen);
    }
    Ok(())
}

/// 𝒢_k: scan neutral densities not yet in 𝒢 by ascending (d, support).
fn update_g(dom: &LatticeDomain, cfg: &CoverConfig, q: &mut [Member], k: u32) {
    let mut order: Vec<usize> = (0..q.len()).filter(|&i| q[i].g_level.is_none() && q[i].rho.is_neutral()).collect();
    order.sort_by(|&a, &b| (q[a].d, q[a].rho.support()).cmp(&(q[b].d, q[b].rho.support())));
    for i in order {
        let di = q[i].d;
        let ok217 = (0..q.len()).all(|t| t == i || !q[t].rho.is_neutral() || q[t].rho.dist_to(&q[i].rho, dom) as f64 >= cfg.m_d_alpha(q[t].d.min(di)));
        let ok218 = (0..q.len()).all(|t| t == i || q[t].g_level.is_some() || q[t].rho.dist_to(&q[i].rho, dom) as f64 >= cfg.m_d_alpha(di));
        if ok217 && ok218 {
            q[i].g_level = Some(k);
        }
    }
}

pub fn run_renormalization(dom: &LatticeDomain, sites: &[(usize, i64, f64)], cfg: &RenormConfig) -> Result<(Vec<Term>, RenormStats)> {
    let mut out = Vec::new();
    let mut stats = RenormStats::default();
    run_renormalization_stream(dom, sites, cfg, &mut stats, &mut |t| out.push(t))?;
    Ok((out, stats))
}

/// Properties (a)–(c) of the decomposition theorem for one ensemble.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PropertyReport {
    pub at_most_one_charged: bool,
    pub separation: bool,
    pub splitting: bool,
    /// Neutral densities whose splittings were enumerated exhaustively.
    pub split_checked: usize,
    pub split_skipped: usize,
}

pub const SPLIT_ENUM_LIMIT: usize = 14;

pub fn check_properties(members: &[Member], dom: &LatticeDomain, cfg: &CoverConfig) -> PropertyReport {
    let charged: Vec<usize> = (0..members.len()).filter(|&i| !members[i].rho.is_neutral()).collect();
    let mut rep = PropertyReport { at_most_one_charged: charged.len() <= 1, separation: true, splitting: true, ..Default::default() };
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            let d = members[i].rho.dist_to(&members[j].rho, dom) as f64;
            let (a, b) = (&members[i], &members[j]);
            if d < cfg.m_d_alpha(a.d.min(b.d)) {
                rep.separation = false;
            }
            if !a.rho.is_neutral() && b.rho.is_neutral() && d < cfg.m_d_alpha(b.d) {
                rep.separation = false;
            }
            if !b.rho.is_neutral() && a.rho.is_neutral() && d < cfg.m_d_alpha(a.d) {
                rep.separation = false;
            }
        }
    }
    for m in members.iter().filter(|m| m.rho.is_neutral()) {
        let e = m.rho.entries();
        if e.len() > SPLIT_ENUM_LIMIT {
            rep.split_skipped += 1;
            continue;
        }
        rep.split_checked += 1;
        if !splitting_ok(e, dom, cfg) {
            rep.splitting = false;
        }
    }
    rep
}

/// Every split ϱ = ϱ₁+ϱ₂ with dist ≥ 2M·min(d₁,d₂)^α has both parts charged.
pub fn splitting_ok(e: &[(usize, i64)], dom: &LatticeDomain, cfg: &CoverConfig) -> bool {
    let n = e.len();
    for mask in 1u32..(1u32 << n) - 1 {
        if mask & 1 == 0 {
            continue; // each unordered split once
        }
        let a: Vec<(usize, i64)> = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| e[i]).collect();
        let b: Vec<(usize, i64)> = (0..n).filter(|&i| mask >> i & 1 == 0).map(|i| e[i]).collect();
        let ra = ChargeDensity::new(dom, &a).expect("nonzero");
        let rb = ChargeDensity::new(dom, &b).expect("nonzero");
        let dist = ra.dist_to(&rb, dom) as f64;
        let thr = 2.0 * cfg.m_d_alpha(ra.diameter(dom).min(rb.diameter(dom)));
        if dist >= thr && (ra.is_neutral() || rb.is_neutral()) {
            return false;
        }
    }
    true
}

/// ln|K(ϱ)| − Σ_j ln(e^{ϱ(j)²}|λ̂_j(|ϱ(j)|)|) per unit A(ϱ): the empirical D₂ contribution.
pub fn d2_ratio(m: &Member, weights: &[TrigWeight], dom: &LatticeDomain, cfg: &CoverConfig, a_cache: &mut HashMap<ChargeDensity, u64>) -> Option<f64> {
    if !m.rho.is_neutral() || m.k == 0.0 {
        return None;
    }
    let a = *a_cache
        .entry(m.rho.clone())
        .or_insert_with(|| MultiscaleCover::build(&m.rho, dom, cfg).map(|c| c.a).unwrap_or(0));
    let mut rhs = 0.0;
    for &(j, q) in m.rho.entries() {
        let h = weights[j].hat(q.abs()).abs();
        if h == 0.0 {
            return None;
        }
        rhs += (q * q) as f64 + h.ln();
    }
    Some((m.k.abs().ln() - rhs) / a as f64)
}

/// Constant-on-D⁺ neighbourhood for neutral members, used downstream.
pub fn neutral_members(members: &[Member]) -> Vec<&Member> {
    members.iter().filter(|m| m.rho.is_neutral()).collect()
}

/// D(ϱ₁) ∩ D(ϱ₂) = ∅ for distinct neutral members.
pub fn neighbourhoods_disjoint(members: &[Member], dom: &LatticeDomain) -> bool {
    let ds: Vec<Vec<usize>> = neutral_members(members).iter().map(|m| center_and_d(&m.rho, dom).set).collect();
    for i in 0..ds.len() {
        for j in i + 1..ds.len() {
            if ds[i].iter().any(|v| ds[j].binary_search(v).is_ok()) {
                return false;
            }
        }
    }
    true
}
