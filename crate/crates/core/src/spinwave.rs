//! Spin waves: the single-site wave a₀, per-square waves a_s and their sum, with the component
//! geometry of the neighbourhoods they must stay constant on.

use serde::Serialize;

use crate::density::{center_and_d, ChargeDensity, CoverConfig, MultiscaleCover};
use crate::lattice::{DyadicSquare, Graph, LatticeDomain};
use crate::{Error, Result};

/// Bound on the gradient norm of the Case 2 profile b̃ at the paper constants: 16 from the
/// non-plateau edges plus at most 16 from plateau boundaries (the latter is below 1 once M = 2^16).
pub const C_GRAD: f64 = 32.0;

/// Scales below this use the explicit Case 1 wave.
pub const CASE2_MIN_K: u32 = 10;

/// D₃ = min(2^-13, ln²(6/5)/(2·C_GRAD)).
pub fn derived_d3() -> f64 {
    let l = (6.0f64 / 5.0).ln();
    (2f64.powi(-13)).min(l * l / (2.0 * C_GRAD))
}

/// E_β(a,ϱ) = ⟨a,ϱ⟩ − (β/2)Σ_{j∼ℓ}(a_j − a_ℓ)².
pub fn energy(a: &[f64], rho: &ChargeDensity, beta: f64, dom: &LatticeDomain) -> Result<f64> {
    Ok(rho.pair(a) - 0.5 * beta * dom.dirichlet_form(a)?)
}

/// Same quantity through ⟨a,−Δa⟩.
pub fn energy_laplacian(a: &[f64], rho: &ChargeDensity, beta: f64, dom: &LatticeDomain) -> Result<f64> {
    let la = dom.laplacian_apply(a)?;
    let q: f64 = a.iter().zip(&la).map(|(x, y)| -x * y).sum();
    Ok(rho.pair(a) - 0.5 * beta * q)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Summand {
    A0 {
        /// Ω₁ is the colour class of vertex 0 when true.
        omega1_first: bool,
        energy: f64,
    },
    Square {
        k: u32,
        anchor: (usize, usize),
        case: u8,
        q: i64,
        gamma: f64,
        grad_norm: f64,
        /// Non-plateau edges (Case 2 only).
        free_edge_sum: f64,
        /// Edges leaving a plateau component (Case 2 only).
        plateau_edge_sum: f64,
        energy: f64,
    },
}

impl Summand {
    pub fn energy(&self) -> f64 {
        match self {
            Summand::A0 { energy, .. } | Summand::Square { energy, .. } => *energy,
        }
    }
}

/// Chosen plateau point and value for one component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Plateau {
    pub component: usize,
    pub x_e: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpinWave {
    #[serde(skip)]
    pub a: Vec<f64>,
    pub beta: f64,
    pub target: ChargeDensity,
    pub summands: Vec<Summand>,
    pub plateaus: Vec<Plateau>,
}

impl SpinWave {
    pub fn energy(&self, dom: &LatticeDomain) -> Result<f64> {
        energy(&self.a, &self.target, self.beta, dom)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::PreconditionViolated(format!("β must be positive, got {beta}")))
    }
}

/// a₀(j) = ϱ₁*(j)/(d_j β) on the heavier colour class Ω₁ (the centre's class when d(ϱ*) = 1).
pub fn build_a0(rho: &ChargeDensity, beta: f64, dom: &LatticeDomain) -> Result<SpinWave> {
    check_beta(beta)?;
    if !rho.is_neutral() {
        return Err(Error::NotNeutral(rho.charge()));
    }
    let col = dom.two_coloring().map_err(|_| Error::BipartitionUnavailable)?;
    let (mut w1, mut w2) = (0i64, 0i64);
    for &(v, q) in rho.entries() {
        if col[v] {
            w1 += q * q
        } else {
            w2 += q * q
        }
    }
    let nb = center_and_d(rho, dom);
    let first = if nb.d == 1 {
        // both classes carry half the mass; take the centre's
        col[nb.center]
    } else {
        w1 >= w2
    };
    let mut a = vec![0.0; dom.n()];
    for &(v, q) in rho.entries() {
        if col[v] == first {
            a[v] = q as f64 / (dom.degree(v) as f64 * beta);
        }
    }
    let e = energy(&a, rho, beta, dom)?;
    Ok(SpinWave {
        a,
        beta,
        target: rho.clone(),
        summands: vec![Summand::A0 { omega1_first: first, energy: e }],
        plateaus: Vec::new(),
    })
}

/// (1/2β)Σ_{Ω₁}ϱ*(j)²/d_j, the exact value of E_β(a₀,ϱ*).
pub fn a0_energy_formula(rho: &ChargeDensity, sw: &SpinWave, dom: &LatticeDomain) -> f64 {
    rho.entries()
        .iter()
        .filter(|&&(v, _)| sw.a[v] != 0.0)
        .map(|&(v, q)| (q * q) as f64 / dom.degree(v) as f64)
        .sum::<f64>()
        / (2.0 * sw.beta)
}

/// One connected component of ∪D⁺(ϱ′).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    pub vertices: Vec<usize>,
    pub diameter: usize,
    pub ext_boundary: Vec<usize>,
    /// Indices into the input list of the densities whose D⁺ lies in this component.
    pub members: Vec<usize>,
    pub dist_to_target: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentGeometry {
    pub components: Vec<Component>,
    /// D⁺(ϱ′) for every input density, in input order.
    #[serde(skip)]
    pub plus_sets: Vec<Vec<usize>>,
    #[serde(skip)]
    pub label: Vec<u32>,
    pub cfg: CoverConfig,
}

impl ComponentGeometry {
    pub fn empty(dom: &LatticeDomain, cfg: CoverConfig) -> Self {
        ComponentGeometry { components: Vec::new(), plus_sets: Vec::new(), label: vec![u32::MAX; dom.n()], cfg }
    }

    pub fn component_of(&self, v: usize) -> Option<usize> {
        let l = self.label[v];
        (l != u32::MAX).then_some(l as usize)
    }
}

/// 𝒩₀(ϱ*): the other neutral densities with d(ϱ′) ≤ 2d(ϱ*).
pub fn n0_of(target: usize, ensemble: &[ChargeDensity], dom: &LatticeDomain) -> Vec<ChargeDensity> {
    let d = ensemble[target].diameter(dom);
    ensemble
        .iter()
        .enumerate()
        .filter(|&(i, r)| i != target && r.is_neutral() && r.diameter(dom) <= 2 * d)
        .map(|(_, r)| r.clone())
        .collect()
}

fn set_diameter(set: &[usize], dom: &LatticeDomain) -> usize {
    let mut d = 0;
    for (i, &x) in set.iter().enumerate() {
        for &y in &set[i + 1..] {
            d = d.max(dom.dist(x, y));
        }
    }
    d
}

/// Components of ∪_{ϱ′∈n0}D⁺(ϱ′) with the Lemma 4.5 inequalities checked at `cfg`.
pub fn component_geometry(target: &ChargeDensity, n0: &[ChargeDensity], dom: &LatticeDomain, cfg: &CoverConfig) -> Result<ComponentGeometry> {
    let n = dom.n();
    let plus_sets: Vec<Vec<usize>> = n0.iter().map(|r| center_and_d(r, dom).plus).collect();
    let mut mark = vec![false; n];
    for p in &plus_sets {
        for &v in p {
            mark[v] = true;
        }
    }
    let mut label = vec![u32::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut nb = Vec::new();
    let mut seeds: Vec<usize> = plus_sets.iter().flatten().copied().collect();
    seeds.sort_unstable();
    seeds.dedup();
    for s in seeds {
        if label[s] != u32::MAX {
            continue;
        }
        let id = comps.len() as u32;
        let mut stack = vec![s];
        label[s] = id;
        let mut verts = Vec::new();
        while let Some(u) = stack.pop() {
            verts.push(u);
            nb.clear();
            dom.neighbors_into(u, &mut nb);
            for &(w, _) in &nb {
                if mark[w] && label[w] == u32::MAX {
                    label[w] = id;
                    stack.push(w);
                }
            }
        }
        verts.sort_unstable();
        comps.push(verts);
    }
    let support = target.support();
    let mut components = Vec::with_capacity(comps.len());
    for (id, verts) in comps.into_iter().enumerate() {
        let mut ext = Vec::new();
        for &u in &verts {
            nb.clear();
            dom.neighbors_into(u, &mut nb);
            ext.extend(nb.iter().filter(|&&(w, _)| label[w] as usize != id).map(|p| p.0));
        }
        ext.sort_unstable();
        ext.dedup();
        let members = plus_sets
            .iter()
            .enumerate()
            .filter(|(_, p)| label[p[0]] as usize == id)
            .map(|(i, _)| i)
            .collect();
        components.push(Component {
            diameter: set_diameter(&verts, dom),
            dist_to_target: dom.set_dist(&verts, &support),
            ext_boundary: ext,
            members,
            vertices: verts,
        });
    }
    let m = cfg.m as f64;
    for (i, c) in components.iter().enumerate() {
        if c.diameter < 4 {
            return Err(Error::PropertyViolation(format!("component {i} has d(E) = {} < 4", c.diameter)));
        }
        let lhs2 = m / 128.0 * (c.diameter as f64).powf(cfg.alpha);
        if lhs2 > c.dist_to_target as f64 {
            return Err(Error::PropertyViolation(format!(
                "(M/128)d(E)^α ≤ dist(E,ϱ*) fails for component {i}: {lhs2} > {}",
                c.dist_to_target
            )));
        }
        if c.ext_boundary.len() > 64 * c.diameter {
            return Err(Error::PropertyViolation(format!(
                "|∂ext E| ≤ 64 d(E) fails for component {i}: {} > {}",
                c.ext_boundary.len(),
                64 * c.diameter
            )));
        }
        for (j, o) in components.iter().enumerate().skip(i + 1) {
            let lhs = m / 25.0 * (c.diameter.min(o.diameter) as f64).powf(cfg.alpha);
            let rhs = (dom.set_dist(&c.vertices, &o.vertices) + c.diameter + o.diameter) as f64;
            if lhs > rhs {
                return Err(Error::PropertyViolation(format!(
                    "(M/25)min(d(E),d(E'))^α ≤ dist(E,E') + d(E) + d(E') fails for components {i},{j}: {lhs} > {rhs}"
                )));
            }
        }
    }
    Ok(ComponentGeometry { components, plus_sets, label, cfg: *cfg })
}

/// Q(s ∩ ϱ*).
pub fn square_charge(s: &DyadicSquare, rho: &ChargeDensity, dom: &LatticeDomain) -> i64 {
    rho.entries().iter().filter(|&&(v, _)| s.contains(dom, v)).map(|p| p.1).sum()
}

/// The radial profile b of the Case 2 wave.
fn case2_profile(r: f64, r1: f64, r2: f64) -> f64 {
    if r <= r1 {
        (6.0f64 / 5.0).ln()
    } else if r <= r2 {
        (r2 / r).ln()
    } else {
        0.0
    }
}

/// a_s for a square s with Q(s∩ϱ*) ≠ 0.
pub fn build_as(s: &DyadicSquare, rho: &ChargeDensity, beta: f64, dom: &LatticeDomain, geom: &ComponentGeometry) -> Result<SpinWave> {
    check_beta(beta)?;
    let q = square_charge(s, rho, dom);
    if q == 0 {
        return Err(Error::NeutralRestriction);
    }
    let k = s.k;
    let n = dom.n();
    let mut a = vec![0.0; n];
    if k < CASE2_MIN_K {
        let val = q as f64 / ((1u64 << (k + 3)) as f64 * beta);
        for (v, x) in a.iter_mut().enumerate() {
            if s.dist_to(dom, v) <= 1 {
                *x = val;
            }
        }
        let g = dom.dirichlet_form(&a)?;
        let e = energy(&a, rho, beta, dom)?;
        return Ok(SpinWave {
            a,
            beta,
            target: rho.clone(),
            summands: vec![Summand::Square {
                k,
                anchor: s.anchor,
                case: 1,
                q,
                gamma: val,
                grad_norm: g,
                free_edge_sum: 0.0,
                plateau_edge_sum: 0.0,
                energy: e,
            }],
            plateaus: Vec::new(),
        });
    }

    let h = (1u64 << (k - 1)) as f64;
    let r1 = h + (1u64 << (k - 3)) as f64;
    let r2 = h + (1u64 << (k - 2)) as f64;
    let norm_s: Vec<f64> = (0..n).map(|v| s.dist_to(dom, v) as f64 + h).collect();
    let mut b: Vec<f64> = norm_s.iter().map(|&r| case2_profile(r, r1, r2)).collect();
    let mut plateaus = Vec::with_capacity(geom.components.len());
    for (ci, c) in geom.components.iter().enumerate() {
        // vertices are sorted, so the first hit is the lexicographically smallest
        let x = c
            .vertices
            .iter()
            .copied()
            .find(|&v| norm_s[v] == r1)
            .or_else(|| c.vertices.iter().copied().find(|&v| norm_s[v] == r2))
            .unwrap_or(c.vertices[0]);
        let val = b[x];
        for &v in &c.vertices {
            b[v] = val;
        }
        plateaus.push(Plateau { component: ci, x_e: x, value: val });
    }
    let (mut free_sum, mut plat_sum) = (0.0, 0.0);
    dom.for_each_edge(&mut |x, y, m| {
        let d = b[x] - b[y];
        let t = m as f64 * d * d;
        if geom.label[x] == u32::MAX && geom.label[y] == u32::MAX {
            free_sum += t
        } else {
            plat_sum += t
        }
    });
    let g = free_sum + plat_sum;
    let p = rho.pair(&b);
    if g == 0.0 || p == 0.0 {
        return Err(Error::PreconditionViolated("the Case 2 profile is flat on this domain".into()));
    }
    let gamma = p / (beta * g);
    for (x, y) in a.iter_mut().zip(&b) {
        *x = gamma * y;
    }
    for pl in &mut plateaus {
        pl.value *= gamma;
    }
    let e = energy(&a, rho, beta, dom)?;
    Ok(SpinWave {
        a,
        beta,
        target: rho.clone(),
        summands: vec![Summand::Square {
            k,
            anchor: s.anchor,
            case: 2,
            q,
            gamma,
            grad_norm: g,
            free_edge_sum: free_sum,
            plateau_edge_sum: plat_sum,
            energy: e,
        }],
        plateaus,
    })
}

/// Exact set checks of a wave against its target and 𝒩₀.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructuralReport {
    pub support_in_d: bool,
    pub laplacian_support_in_d: bool,
    pub constant_on_plus: bool,
}

impl StructuralReport {
    pub fn all(&self) -> bool {
        self.support_in_d && self.laplacian_support_in_d && self.constant_on_plus
    }
}

pub fn structural_checks(a: &[f64], target: &ChargeDensity, geom: &ComponentGeometry, dom: &LatticeDomain) -> Result<StructuralReport> {
    let nbh = center_and_d(target, dom);
    let mut in_d = vec![false; dom.n()];
    for &v in &nbh.set {
        in_d[v] = true;
    }
    let la = dom.laplacian_apply(a)?;
    let support_in_d = a.iter().enumerate().all(|(v, &x)| x == 0.0 || in_d[v]);
    // Δa vanishes up to rounding outside the support's neighbourhood; exact zero elsewhere
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let laplacian_support_in_d = la.iter().enumerate().all(|(v, &x)| in_d[v] || x.abs() <= 1e-14 * scale);
    let constant_on_plus = geom.plus_sets.iter().all(|p| p.iter().all(|&v| a[v] == a[p[0]]));
    Ok(StructuralReport { support_in_d, laplacian_support_in_d, constant_on_plus })
}

#[derive(Clone, Debug, Serialize)]
pub struct AssemblyReport {
    pub energy: f64,
    pub summand_energies: Vec<f64>,
    /// |E(a) − Σ E(summand)| / max(1, |E(a)|).
    pub additivity_residual: f64,
    pub separated_total: usize,
    pub d3: f64,
    pub bound_rhs: f64,
    pub bound_holds: bool,
    pub structural: StructuralReport,
    /// min over square summands of β·E_β(a_s,ϱ*).
    pub min_square_energy: Option<f64>,
}

/// a = a₀ + Σ_k Σ_{s∈S_k^sep} a_s, with edge-disjoint gradients checked exhaustively.
pub fn assemble_spinwave(
    rho: &ChargeDensity,
    beta: f64,
    dom: &LatticeDomain,
    cover: &MultiscaleCover,
    geom: &ComponentGeometry,
) -> Result<(SpinWave, AssemblyReport)> {
    let a0 = build_a0(rho, beta, dom)?;
    let mut parts = vec![a0];
    for sc in cover.scales.iter().skip(1) {
        for s in &sc.separated {
            parts.push(build_as(s, rho, beta, dom, geom)?);
        }
    }
    let mut owner: Vec<Option<usize>> = Vec::new();
    let mut overlap = None;
    let mut idx = 0usize;
    dom.for_each_edge(&mut |x, y, _| {
        if owner.len() <= idx {
            owner.push(None);
        }
        for (pi, p) in parts.iter().enumerate() {
            if p.a[x] != p.a[y] {
                match owner[idx] {
                    Some(o) if o != pi => {
                        overlap.get_or_insert((x, y));
                    }
                    _ => owner[idx] = Some(pi),
                }
            }
        }
        idx += 1;
    });
    if let Some((x, y)) = overlap {
        return Err(Error::GradientOverlap(x, y));
    }
    let mut a = vec![0.0; dom.n()];
    let mut summands = Vec::new();
    let mut plateaus = Vec::new();
    let mut energies = Vec::new();
    for p in &parts {
        for (x, y) in a.iter_mut().zip(&p.a) {
            *x += y;
        }
        energies.push(p.summands[0].energy());
        summands.extend(p.summands.iter().cloned());
        plateaus.extend(p.plateaus.iter().cloned());
    }
    let e = energy(&a, rho, beta, dom)?;
    let sum: f64 = energies.iter().sum();
    let sep = cover.separated_total();
    let d3 = derived_d3();
    let bound_rhs = (rho.norm2sq() as f64 / 16.0 + d3 * sep as f64) / beta;
    let structural = structural_checks(&a, rho, geom, dom)?;
    let min_sq = energies[1..].iter().map(|x| x * beta).reduce(f64::min);
    let report = AssemblyReport {
        energy: e,
        additivity_residual: (e - sum).abs() / e.abs().max(1.0),
        summand_energies: energies,
        separated_total: sep,
        d3,
        bound_rhs,
        bound_holds: e >= bound_rhs * (1.0 - 1e-12),
        structural,
        min_square_energy: min_sq,
    };
    Ok((SpinWave { a, beta, target: rho.clone(), summands, plateaus }, report))
}

/// Full construction for member `target` of an ensemble: 𝒩₀, geometry, covers, assembly.
pub fn spinwave_for_member(
    target: usize,
    ensemble: &[ChargeDensity],
    beta: f64,
    dom: &LatticeDomain,
    cfg: &CoverConfig,
) -> Result<(SpinWave, AssemblyReport, ComponentGeometry)> {
    let rho = &ensemble[target];
    let n0 = n0_of(target, ensemble, dom);
    let geom = component_geometry(rho, &n0, dom, cfg)?;
    let cover = MultiscaleCover::build(rho, dom, cfg)?;
    let (sw, rep) = assemble_spinwave(rho, beta, dom, &cover, &geom)?;
    Ok((sw, rep, geom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::random_density;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dipole(dom: &LatticeDomain, p: (usize, usize), q: (usize, usize)) -> ChargeDensity {
        ChargeDensity::from_sites(dom, &[(p, 1), (q, -1)]).unwrap()
    }

    #[test]
    fn energy_forms() {
        let dom = LatticeDomain::periodic(6);
        let rho = dipole(&dom, (2, 2), (2, 3));
        assert_eq!(energy(&vec![0.0; 36], &rho, 1.0, &dom).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a: Vec<f64> = (0..36).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let e1 = energy(&a, &rho, 0.7, &dom).unwrap();
            let e2 = energy_laplacian(&a, &rho, 0.7, &dom).unwrap();
            assert!((e1 - e2).abs() <= 1e-12 * e1.abs().max(1.0));
        }
    }

    #[test]
    fn dipole_a0() {
        let dom = LatticeDomain::periodic(8);
        let rho = dipole(&dom, (3, 3), (3, 4));
        let sw = build_a0(&rho, 1.0, &dom).unwrap();
        let nz: Vec<(usize, f64)> = sw.a.iter().copied().enumerate().filter(|p| p.1 != 0.0).collect();
        assert_eq!(nz.len(), 1);
        let center = center_and_d(&rho, &dom).center;
        assert_eq!(nz[0].0, center);
        assert_eq!(nz[0].1.abs(), 0.25);
        let e = sw.energy(&dom).unwrap();
        assert!((e - 0.125).abs() < 1e-15);
        assert!((a0_energy_formula(&rho, &sw, &dom) - e).abs() < 1e-15);
        let sw2 = build_a0(&rho, 2.0, &dom).unwrap();
        for (x, y) in sw.a.iter().zip(&sw2.a) {
            assert_eq!(*x, 2.0 * y);
        }
    }

    #[test]
    fn a0_errors() {
        let dom = LatticeDomain::free(4);
        let rho = ChargeDensity::from_sites(&dom, &[((0, 0), 1)]).unwrap();
        assert_eq!(build_a0(&rho, 1.0, &dom).unwrap_err(), Error::NotNeutral(1));
        let z = LatticeDomain::zero(3);
        let rho = dipole(&z, (0, 0), (1, 1));
        assert_eq!(build_a0(&rho, 1.0, &z).unwrap_err(), Error::BipartitionUnavailable);
    }

    #[test]
    fn a0_lemma_on_random_free8() {
        let dom = LatticeDomain::free(8);
        let geom = ComponentGeometry::empty(&dom, CoverConfig::paper());
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..200 {
            let rho = random_density(&dom, &mut rng, 6, 3, true);
            let sw = build_a0(&rho, 0.9, &dom).unwrap();
            let e = sw.energy(&dom).unwrap();
            assert!(e >= rho.norm2sq() as f64 / (16.0 * 0.9) - 1e-12);
            assert!((a0_energy_formula(&rho, &sw, &dom) - e).abs() < 1e-12);
            for (v, &x) in sw.a.iter().enumerate() {
                if x != 0.0 {
                    assert!(rho.support().iter().any(|&s| dom.dist(s, v) <= 1));
                }
            }
            assert!(structural_checks(&sw.a, &rho, &geom, &dom).unwrap().all());
        }
    }

    #[test]
    fn case1_closed_form() {
        let dom = LatticeDomain::periodic(16);
        let rho = ChargeDensity::from_sites(&dom, &[((5, 5), 1), ((12, 12), -1)]).unwrap();
        let s = DyadicSquare::at(&dom, 1, 5, 5);
        let geom = ComponentGeometry::empty(&dom, CoverConfig::paper());
        let sw = build_as(&s, &rho, 1.0, &dom, &geom).unwrap();
        let e = sw.energy(&dom).unwrap();
        assert!((e - 1.0 / 32.0).abs() < 1e-15, "{e}");
        let zero = DyadicSquare::at(&dom, 1, 0, 0);
        assert_eq!(build_as(&zero, &rho, 1.0, &dom, &geom).unwrap_err(), Error::NeutralRestriction);
        for k in 1..3 {
            let s = DyadicSquare::at(&dom, k, 5, 5);
            let e = build_as(&s, &rho, 1.3, &dom, &geom).unwrap().energy(&dom).unwrap();
            assert!(e >= 1.0 / ((1u64 << (k + 4)) as f64 * 1.3) - 1e-15);
        }
    }

    #[test]
    fn geometry_examples() {
        let dom = LatticeDomain::free(40);
        let cfg = CoverConfig::test_scaled(2);
        let target = dipole(&dom, (2, 2), (2, 3));
        let g = component_geometry(&target, &[], &dom, &cfg).unwrap();
        assert!(g.components.is_empty());
        let far = dipole(&dom, (30, 30), (30, 31));
        let g = component_geometry(&target, std::slice::from_ref(&far), &dom, &cfg).unwrap();
        assert_eq!(g.components.len(), 1);
        let c = &g.components[0];
        assert_eq!(c.vertices, center_and_d(&far, &dom).plus);
        assert!(c.ext_boundary.len() <= 64 * c.diameter);
        let other = dipole(&dom, (15, 30), (16, 30));
        let g = component_geometry(&target, &[far.clone(), other], &dom, &cfg).unwrap();
        assert_eq!(g.components.len(), 2);
        let (e, f) = (&g.components[0], &g.components[1]);
        let lhs = 2.0 / 25.0 * (e.diameter.min(f.diameter) as f64).powf(1.75);
        assert!(lhs <= (dom.set_dist(&e.vertices, &f.vertices) + e.diameter + f.diameter) as f64);
        // at the paper constants the same pair violates Lemma 4.5(2)
        let err = component_geometry(&target, &[far], &dom, &CoverConfig::paper()).unwrap_err();
        assert!(matches!(err, Error::PropertyViolation(m) if m.contains("M/128")));
    }

    #[test]
    fn assembly_without_squares_is_a0() {
        let dom = LatticeDomain::free(12);
        let cfg = CoverConfig::paper();
        let rho = ChargeDensity::from_sites(&dom, &[((3, 3), 2), ((4, 3), -1), ((6, 6), -1)]).unwrap();
        let cover = MultiscaleCover::build(&rho, &dom, &cfg).unwrap();
        assert_eq!(cover.separated_total(), 0);
        let geom = ComponentGeometry::empty(&dom, cfg);
        let (sw, rep) = assemble_spinwave(&rho, 1.0, &dom, &cover, &geom).unwrap();
        assert_eq!(sw.a, build_a0(&rho, 1.0, &dom).unwrap().a);
        assert!(rep.bound_holds);
        assert!((rep.bound_rhs - 6.0 / 16.0).abs() < 1e-15);
        assert!(rep.structural.all());
    }

    #[test]
    fn assembly_with_separated_squares() {
        // M=1 makes the level-1 separation 2·2^{3.5} ≈ 22.6 reachable
        let dom = LatticeDomain::free(40);
        let cfg = CoverConfig::test_scaled(1);
        let rho = ChargeDensity::from_sites(&dom, &[((2, 2), 1), ((2, 3), 1), ((36, 36), -1), ((36, 37), -1)]).unwrap();
        let cover = MultiscaleCover::build(&rho, &dom, &cfg).unwrap();
        assert!(cover.separated_total() > 0);
        let geom = ComponentGeometry::empty(&dom, cfg);
        let (sw, rep) = assemble_spinwave(&rho, 0.8, &dom, &cover, &geom).unwrap();
        assert!(rep.additivity_residual <= 1e-12, "{}", rep.additivity_residual);
        assert!(rep.bound_holds);
        assert!(rep.min_square_energy.unwrap() >= rep.d3);
        assert!(rep.structural.all());
        assert_eq!(sw.summands.len(), 1 + cover.separated_total());
        let total_delta: f64 = dom.laplacian_apply(&sw.a).unwrap().iter().sum();
        assert!(total_delta.abs() < 1e-12);
    }

    #[test]
    fn orthogonality_of_admissible_pair() {
        let dom = LatticeDomain::free(48);
        let cfg = CoverConfig::test_scaled(2);
        let ens = vec![dipole(&dom, (5, 5), (5, 6)), dipole(&dom, (40, 40), (41, 40))];
        let (a, ra, _) = spinwave_for_member(0, &ens, 1.0, &dom, &cfg).unwrap();
        let (b, rb, _) = spinwave_for_member(1, &ens, 1.0, &dom, &cfg).unwrap();
        assert!(ra.structural.all() && rb.structural.all());
        assert_eq!(ens[1].pair(&a.a), 0.0);
        let lb = dom.laplacian_apply(&b.a).unwrap();
        assert_eq!(a.a.iter().zip(&lb).map(|(x, y)| x * y).sum::<f64>(), 0.0);
    }

    #[test]
    fn gradient_overlap_detected() {
        // hand-built cover with two overlapping separated squares
        let dom = LatticeDomain::periodic(16);
        let cfg = CoverConfig::paper();
        let rho = ChargeDensity::from_sites(&dom, &[((4, 4), 1), ((4, 6), 1), ((12, 12), -2)]).unwrap();
        let mut cover = MultiscaleCover::build_to(&rho, &dom, &cfg, Some(2)).unwrap();
        cover.scales[1].separated = vec![DyadicSquare::at(&dom, 1, 4, 4), DyadicSquare::at(&dom, 1, 4, 6)];
        let geom = ComponentGeometry::empty(&dom, cfg);
        assert!(matches!(assemble_spinwave(&rho, 1.0, &dom, &cover, &geom), Err(Error::GradientOverlap(..))));
    }

    #[test]
    fn case2_plateau_instance() {
        // k = 10 needs a side past 1024 + 256; test-scaled M keeps Lemma 4.5 satisfiable
        let dom = LatticeDomain::free(1300);
        let cfg = CoverConfig::test_scaled(2);
        let rho = ChargeDensity::from_sites(&dom, &[((500, 500), 1), ((1299, 1299), -1)]).unwrap();
        let n0 = vec![
            dipole(&dom, (1200, 300), (1200, 301)),
            dipole(&dom, (300, 1210), (301, 1210)),
            dipole(&dom, (1151, 500), (1152, 500)),
            dipole(&dom, (1279, 700), (1280, 700)),
            dipole(&dom, (1100, 100), (1100, 101)),
        ];
        let geom = component_geometry(&rho, &n0, &dom, &cfg).unwrap();
        assert_eq!(geom.components.len(), 5);
        let s = DyadicSquare::at(&dom, 10, 0, 0);
        let beta = 1.5;
        let sw = build_as(&s, &rho, beta, &dom, &geom).unwrap();
        let Summand::Square { case, gamma, grad_norm, free_edge_sum, .. } = sw.summands[0].clone() else { panic!() };
        assert_eq!(case, 2);
        assert!(free_edge_sum <= 16.0 && grad_norm <= C_GRAD, "{free_edge_sum} {grad_norm}");
        let c0 = sw.a[0];
        for v in 0..dom.n() {
            let ds = s.dist_to(&dom, v);
            if ds <= 128 {
                assert_eq!(sw.a[v], c0);
            }
            if ds > 512 {
                assert_eq!(sw.a[v], 0.0);
            }
        }
        for p in &geom.plus_sets {
            assert!(p.iter().all(|&v| sw.a[v] == sw.a[p[0]]));
        }
        let l65 = (1.2f64).ln();
        assert!((rho.pair(&sw.a) - gamma * l65).abs() < 1e-12);
        let e = sw.energy(&dom).unwrap();
        assert!((e - l65 * l65 / (2.0 * beta * grad_norm)).abs() < 1e-12);
        assert!(beta * e >= derived_d3());
        // x_E on the R1 and R2 level sets where the component meets them
        let r1 = 640.0;
        let r2 = 768.0;
        let pl = |i: usize| &sw.plateaus[geom.component_of(center_and_d(&n0[i], &dom).center).unwrap()];
        assert_eq!(s.dist_to(&dom, pl(2).x_e) as f64 + 512.0, r1);
        assert_eq!(s.dist_to(&dom, pl(3).x_e) as f64 + 512.0, r2);
    }

    #[test]
    fn d3_value() {
        assert_eq!(derived_d3(), 2f64.powi(-13));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn a0_bound_any_beta(seed in any::<u64>(), beta in 0.05f64..5.0) {
            let dom = LatticeDomain::periodic(8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(&dom, &mut rng, 8, 4, true);
            let sw = build_a0(&rho, beta, &dom).unwrap();
            let e = sw.energy(&dom).unwrap();
            prop_assert!(e >= rho.norm2sq() as f64 / (16.0 * beta) * (1.0 - 1e-12));
            let s: f64 = dom.laplacian_apply(&sw.a).unwrap().iter().sum();
            prop_assert!(s.abs() < 1e-12);
        }
    }
}
