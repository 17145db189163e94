//! Check harness: identities against closed-form oracles, inequalities as properties, and
//! report-only trend tables for the asymptotic statements.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::density::{center_and_d, neutral_edge_decomposition, ChargeDensity, CoverConfig, MultiscaleCover};
use crate::duality::{dual_lattice, duality_check, partition_identity_l2, DualityOptions};
use crate::ensemble::{run_renormalization, weights_to_density_mixture, RenormConfig};
use crate::fields::{
    batch_means, enumerate_iv, gff_laplace_exact, restricted_laplacian, sine_gordon_derivative_mc, sine_gordon_pair, stream_rng,
    villain_observables, weighted_fourier, GffSampler, ShiftField,
};
use crate::green::{big_f_y, f_y, DifferenceOps, GreenOperator};
use crate::lattice::{Graph, LatticeDomain, SimpleGraph};
use crate::spinwave::{assemble_spinwave, derived_d3, spinwave_for_member, ComponentGeometry};
use crate::weights::TrigWeight;
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    ReportOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Paper,
    TestScaled,
}

/// M for the test-scaled profile.
pub const TEST_SCALED_M: u64 = 2;

impl Profile {
    pub fn cover(&self) -> CoverConfig {
        match self {
            Profile::Paper => CoverConfig::paper(),
            Profile::TestScaled => CoverConfig::test_scaled(TEST_SCALED_M),
        }
    }
    pub fn name(&self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::TestScaled => "test-scaled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Identities,
    Bounds,
    Duality,
    All,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub id: String,
    /// Short label of the statement being exercised.
    pub anchor: String,
    pub status: Status,
    /// Positive when satisfied: tolerance minus error for equalities, slack for inequalities.
    pub margin: f64,
    pub tolerances: BTreeMap<String, f64>,
    /// Wall clock; dropped from written reports unless timings are requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
    pub config_hash: String,
    pub profile: String,
    pub details: Value,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
    /// Same report with the wall-clock field cleared, for reproducibility comparisons.
    pub fn without_runtime(&self) -> Self {
        CheckReport { runtime_ms: None, ..self.clone() }
    }
}

fn canonical(v: &Value) -> String {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<&String, &Value> = m.iter().collect();
            let parts: Vec<String> = sorted.iter().map(|(k, x)| format!("{}:{}", Value::String((*k).clone()), canonical(x))).collect();
            format!("{{{}}}", parts.join(","))
        }
        Value::Array(a) => format!("[{}]", a.iter().map(canonical).collect::<Vec<_>>().join(",")),
        x => x.to_string(),
    }
}

/// sha256 of the canonical (key-sorted, compact) JSON encoding.
pub fn config_hash(v: &Value) -> String {
    let mut h = Sha256::new();
    h.update(canonical(v).as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct Builder {
    id: String,
    anchor: String,
    config: Value,
    profile: Profile,
    start: Instant,
    tol: BTreeMap<String, f64>,
}

impl Builder {
    fn new(id: &str, anchor: &str, profile: Profile, config: Value) -> Self {
        Builder { id: id.into(), anchor: anchor.into(), config, profile, start: Instant::now(), tol: BTreeMap::new() }
    }
    fn tol(mut self, k: &str, v: f64) -> Self {
        self.tol.insert(k.into(), v);
        self
    }
    fn finish(self, status: Status, margin: f64, details: Value) -> CheckReport {
        let cfg = json!({"id": self.id, "config": self.config, "profile": self.profile.name(), "version": VERSION});
        CheckReport {
            config_hash: config_hash(&cfg),
            id: self.id,
            anchor: self.anchor,
            status,
            margin,
            tolerances: self.tol,
            runtime_ms: Some(self.start.elapsed().as_secs_f64() * 1e3),
            profile: self.profile.name().into(),
            details,
        }
    }
    fn equality(self, err: f64, tol: f64, details: Value) -> CheckReport {
        let st = if err <= tol { Status::Pass } else { Status::Fail };
        self.tol("abs", tol).finish(st, tol - err, details)
    }
}

fn pass_if(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// Exact E_GFF[e^{i⟨φ,u⟩}] for the measure normalised at v: φ_v uniform on [−π,π) times a
/// Gaussian with precision β(−Δ restricted) for φ − φ_v.
pub struct GaussianOracle {
    pub beta: f64,
    pub v: usize,
    idx: Vec<usize>,
    cov: DMatrix<f64>,
}

impl GaussianOracle {
    pub fn new<G: Graph + ?Sized>(g: &G, beta: f64, v: usize) -> Result<Self> {
        let (a, idx) = restricted_laplacian(g, v);
        let cov = a.cholesky().ok_or(Error::FactorizationFailure)?.inverse() / beta;
        Ok(GaussianOracle { beta, v, idx, cov })
    }

    pub fn char_fn(&self, u: &[f64]) -> f64 {
        let q: f64 = u.iter().sum();
        let phase = if q.abs() < 1e-12 {
            1.0
        } else if (q - q.round()).abs() < 1e-12 {
            0.0
        } else {
            (PI * q).sin() / (PI * q)
        };
        if phase == 0.0 {
            return 0.0;
        }
        let ur = DVector::from_iterator(self.idx.len(), self.idx.iter().map(|&j| u[j]));
        phase * (-0.5 * ur.dot(&(&self.cov * &ur))).exp()
    }

    /// E[Π_i (1 + K_i cos(⟨φ,u_i⟩ + s_i))], by expanding each factor into e^{±i(...)}.
    pub fn cos_product(&self, factors: &[(f64, Vec<f64>, f64)]) -> f64 {
        let k = factors.len();
        assert!(k <= 16, "too many factors for sign enumeration");
        let n = factors.first().map_or(0, |f| f.1.len());
        let mut total = 0.0;
        let mut signs = vec![-1i32; k];
        loop {
            let mut coef = 1.0;
            let mut s = 0.0;
            let mut u = vec![0.0; n];
            for (i, &e) in signs.iter().enumerate() {
                if e != 0 {
                    let (kk, ref ui, si) = factors[i];
                    coef *= kk / 2.0;
                    s += e as f64 * si;
                    for (a, b) in u.iter_mut().zip(ui) {
                        *a += e as f64 * b;
                    }
                }
            }
            if coef != 0.0 {
                total += coef * s.cos() * if n == 0 { 1.0 } else { self.char_fn(&u) };
            }
            let mut i = 0;
            while i < k && signs[i] == 1 {
                signs[i] = -1;
                i += 1;
            }
            if i == k {
                break;
            }
            signs[i] += 1;
        }
        total
    }
}

/// ∫ e^{iqx}exp(−(β/2)Σ(x−x_j)²)dx against the same integrand shifted to x + ia, by adaptive
/// quadrature, plus the closed form.
pub fn check_complex_translation_1d(q: f64, a: f64, xs: &[f64], beta: f64) -> CheckReport {
    let b = Builder::new("identities.complex-translation.1d", "contour shift", Profile::Paper, json!({"q": q, "a": a, "xs": xs, "beta": beta}));
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let base = |x: f64| xs.iter().map(|xj| (x - xj).powi(2)).sum::<f64>();
    let r = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())) + 40.0 / (beta * n).sqrt() + 40.0 * a.abs();
    // unit panels: a single double-exponential rule over [−R,R] misses the narrow peak
    let panels = (2.0 * r).ceil() as usize;
    let quad = |f: &dyn Fn(f64) -> f64| -> f64 {
        (0..panels).map(|i| quadrature::integrate(f, -r + i as f64, -r + i as f64 + 1.0, 1e-15).integral).sum()
    };
    let l_re = quad(&|x| (q * x).cos() * (-0.5 * beta * base(x)).exp());
    let l_im = quad(&|x| (q * x).sin() * (-0.5 * beta * base(x)).exp());
    // e^{iq(x+ia)}exp(−(β/2)Σ(x+ia−x_j)²) = e^{−qa+nβa²/2}e^{−(β/2)Σ(x−x_j)²}e^{i(qx−βaΣ(x−x_j))}
    let pre = (-q * a + 0.5 * n * beta * a * a).exp();
    let ph = |x: f64| q * x - beta * a * xs.iter().map(|xj| x - xj).sum::<f64>();
    let r_re = pre * quad(&|x| ph(x).cos() * (-0.5 * beta * base(x)).exp());
    let r_im = pre * quad(&|x| ph(x).sin() * (-0.5 * beta * base(x)).exp());
    // closed form: √(2π/(nβ))·e^{iq x̄}·e^{−q²/(2nβ)}·e^{−(β/2)(Σx_j² − n x̄²)}
    let spread = xs.iter().map(|x| x * x).sum::<f64>() - n * xbar * xbar;
    let mag = (2.0 * PI / (n * beta)).sqrt() * (-q * q / (2.0 * n * beta) - 0.5 * beta * spread).exp();
    let (c_re, c_im) = (mag * (q * xbar).cos(), mag * (q * xbar).sin());
    let err = ((l_re - r_re).hypot(l_im - r_im)).max((l_re - c_re).hypot(l_im - c_im));
    b.equality(err, 1e-10, json!({"lhs": [l_re, l_im], "rhs": [r_re, r_im], "closed_form": [c_re, c_im]}))
}

/// Both sides of the complex translation identity on a small lattice: closed form, and MC on
/// common samples.
pub fn check_complex_translation(dom: &LatticeDomain, tau: &[f64], a: &[f64], beta: f64, samples: usize, seed: u64) -> Result<CheckReport> {
    let n = dom.n();
    if tau.len() != n || a.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: tau.len() });
    }
    let qt: f64 = tau.iter().sum();
    if qt.abs() > 1e-12 {
        return Err(Error::PreconditionViolated(format!("Σ τ = {qt}, must vanish")));
    }
    let v = 0;
    let a: Vec<f64> = a.iter().map(|x| x - a[v]).collect();
    let b = Builder::new(
        "identities.complex-translation.lattice",
        "complex translation",
        Profile::Paper,
        json!({"L": dom.side(), "tau": tau, "a": a, "beta": beta, "samples": samples, "seed": seed}),
    )
    .tol("closed_form_abs", 1e-10)
    .tol("mc_se", 3.0);
    let lap = dom.laplacian_apply(&a)?;
    let e = tau.iter().zip(&a).map(|(t, x)| t * x).sum::<f64>() - 0.5 * beta * dom.dirichlet_form(&a)?;
    let shifted: Vec<f64> = tau.iter().zip(&lap).map(|(t, l)| t + beta * l).collect();
    let or = GaussianOracle::new(dom, beta, v)?;
    let lhs = or.char_fn(tau);
    let rhs = (-e).exp() * or.char_fn(&shifted);
    let cf_err = (lhs - rhs).abs();
    let s = GffSampler::new(dom, beta, v)?;
    let w = (-e).exp();
    let rows = s.map_samples(samples, seed, 8, |phi| {
        let x: f64 = phi.iter().zip(tau).map(|(p, t)| p * t).sum();
        let y: f64 = phi.iter().zip(&shifted).map(|(p, t)| p * t).sum();
        (x.cos(), w * y.cos())
    });
    let (l, r): (Vec<f64>, Vec<f64>) = rows.iter().cloned().unzip();
    let diff: Vec<f64> = rows.iter().map(|(x, y)| x - y).collect();
    let (le, re, de) = (batch_means(&l), batch_means(&r), batch_means(&diff));
    let z = if de.se > 0.0 { de.mean.abs() / de.se } else if de.mean == 0.0 { 0.0 } else { f64::INFINITY };
    let ok = cf_err <= 1e-10 && z <= 3.0;
    Ok(b.finish(
        pass_if(ok),
        (1e-10 - cf_err).min(3.0 - z),
        json!({"energy": e, "closed_form": {"lhs": lhs, "rhs": rhs}, "mc": {"lhs": le, "rhs": re, "diff": de, "z": z}}),
    ))
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PipelineSummary {
    pub lhs_fourier: f64,
    pub mixture: f64,
    pub renormalized: f64,
    pub abs_mass: f64,
    pub mixture_rel: f64,
    pub renormalized_rel: f64,
    pub step1_max_abs: f64,
    pub orthogonality_max: f64,
    pub eloc_violations: usize,
    pub property1: bool,
    pub property3: bool,
    /// Whether the cover constants force property 3 (false for small test-scaled M).
    pub property3_enforced: bool,
    pub terms: usize,
    pub neutral_members: usize,
    pub spin_wave_squares: usize,
    pub geometry_fallbacks: usize,
    pub max_abs_z: f64,
}

/// Same-scale densities are at distance ≥ M(2^k−1)^α and D has radius < 2d ≤ 2(2^{k+1}−2), so
/// disjointness follows once M(2^k−1)^α ≥ 4(2^{k+1}−2) at every k ≥ 1.
pub fn scale_disjointness_guaranteed(cfg: &CoverConfig) -> bool {
    (1..60).all(|k| cfg.m_d_alpha((1usize << k) - 1) >= 4.0 * ((1u64 << (k + 1)) - 2) as f64)
}

/// Dyadic scale k with d ∈ [2^k − 1, 2^{k+1} − 2].
fn diameter_scale(d: usize) -> u32 {
    (d + 1).ilog2()
}

/// Weights → site mixture → renormalized ensembles → spin waves → complex translation, with
/// every mixture term evaluated by the Gaussian oracle.
pub fn thm234_pipeline(dom: &LatticeDomain, weights: &[TrigWeight], beta: f64, sigma: &[f64], cfg: &CoverConfig) -> Result<PipelineSummary> {
    let n = dom.n();
    if weights.len() != n || sigma.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: weights.len() });
    }
    let op = GreenOperator::new(dom)?;
    let oracle = GaussianOracle::new(dom, beta, 0)?;
    let mut out = PipelineSummary {
        lhs_fourier: weighted_fourier(&op, beta, weights, &vec![0.0; n], sigma, 1e7)?,
        property1: true,
        property3: true,
        property3_enforced: scale_disjointness_guaranteed(cfg),
        ..Default::default()
    };
    let rcfg = RenormConfig::new(*cfg);
    let d3 = derived_d3();
    for st in weights_to_density_mixture(weights)? {
        let (terms, _) = run_renormalization(dom, &st.sites, &rcfg)?;
        for t in terms {
            out.terms += 1;
            let coef = st.xi * t.c;
            let factor = |k: f64, r: &ChargeDensity| (k, r.to_dense(n), r.pair(sigma));
            let full: Vec<_> = t.members.iter().map(|m| factor(m.k, &m.rho)).collect();
            let neutral: Vec<_> = t.members.iter().filter(|m| m.rho.is_neutral()).collect();
            let e_full = oracle.cos_product(&full);
            let e_n0 = oracle.cos_product(&neutral.iter().map(|m| factor(m.k, &m.rho)).collect::<Vec<_>>());
            out.step1_max_abs = out.step1_max_abs.max((e_full - e_n0).abs());
            out.mixture += coef * e_full;
            out.abs_mass += coef.abs() * t.members.iter().map(|m| 1.0 + m.k.abs()).product::<f64>();

            let rhos: Vec<ChargeDensity> = neutral.iter().map(|m| m.rho.clone()).collect();
            let mut waves = Vec::with_capacity(rhos.len());
            for i in 0..rhos.len() {
                let (sw, rep) = match spinwave_for_member(i, &rhos, beta, dom, cfg) {
                    Ok((sw, rep, _)) => (sw, rep),
                    Err(Error::PropertyViolation(_)) => {
                        // the desk-scale geometry misses the lemma's hypotheses: keep a₀ and squares only
                        out.geometry_fallbacks += 1;
                        let cover = MultiscaleCover::build(&rhos[i], dom, cfg)?;
                        assemble_spinwave(&rhos[i], beta, dom, &cover, &ComponentGeometry::empty(dom, *cfg))?
                    }
                    Err(e) => return Err(e),
                };
                out.spin_wave_squares += rep.separated_total;
                if !rep.bound_holds {
                    out.eloc_violations += 1;
                }
                waves.push((sw.a, rep.energy, rep.separated_total));
            }
            // orthogonality: ⟨a_ϱ,ϱ'⟩ = 0 and ⟨a_ϱ,Δa_ϱ'⟩ = 0
            let laps: Vec<Vec<f64>> = waves.iter().map(|w| dom.laplacian_apply(&w.0)).collect::<Result<_>>()?;
            for i in 0..rhos.len() {
                for j in 0..rhos.len() {
                    if i != j {
                        let o1 = rhos[j].pair(&waves[i].0).abs();
                        let o2 = waves[i].0.iter().zip(&laps[j]).map(|(x, y)| x * y).sum::<f64>().abs();
                        out.orthogonality_max = out.orthogonality_max.max(o1).max(o2);
                    }
                }
            }
            let mut renorm = Vec::with_capacity(rhos.len());
            for (i, m) in neutral.iter().enumerate() {
                let z = m.k * (-waves[i].1).exp();
                // |z| ≤ |K|exp(−(1/β)(‖ϱ‖²/16 + D₃Σ|S'_k|))
                let bound = m.k.abs() * (-(m.rho.norm2sq() as f64 / 16.0 + d3 * waves[i].2 as f64) / beta).exp();
                if z.abs() > bound * (1.0 + 1e-12) {
                    out.eloc_violations += 1;
                }
                out.max_abs_z = out.max_abs_z.max(z.abs());
                let bar: Vec<f64> = m.rho.to_dense(n).iter().zip(&laps[i]).map(|(r, l)| r + beta * l).collect();
                renorm.push((z, bar, m.rho.pair(sigma)));
            }
            out.renormalized += coef * oracle.cos_product(&renorm);
            out.neutral_members += rhos.len();
            out.property1 &= rhos.iter().all(|r| r.is_neutral());
            for i in 0..rhos.len() {
                for j in i + 1..rhos.len() {
                    let (di, dj) = (rhos[i].diameter(dom), rhos[j].diameter(dom));
                    if diameter_scale(di) == diameter_scale(dj) && diameter_scale(di) >= 1 {
                        let a = center_and_d(&rhos[i], dom).set;
                        let b = center_and_d(&rhos[j], dom).set;
                        if a.iter().any(|x| b.binary_search(x).is_ok()) {
                            out.property3 = false;
                        }
                    }
                }
            }
        }
    }
    let scale = out.lhs_fourier.abs().max(out.abs_mass);
    out.mixture_rel = (out.mixture - out.lhs_fourier).abs() / scale;
    out.renormalized_rel = (out.renormalized - out.lhs_fourier).abs() / scale;
    Ok(out)
}

pub fn check_thm234_pipeline(
    id: &str,
    dom: &LatticeDomain,
    weights: &[TrigWeight],
    beta: f64,
    sigma: &[f64],
    profile: Profile,
) -> Result<CheckReport> {
    let cfg = profile.cover();
    let b = Builder::new(
        id,
        "renormalized mixture equality",
        profile,
        json!({"L": dom.side(), "weights": weights, "beta": beta, "sigma": sigma, "alpha": cfg.alpha, "M": cfg.m}),
    )
    .tol("rel", 1e-9)
    .tol("step1_abs", 1e-10)
    .tol("orthogonality", 1e-9);
    let s = thm234_pipeline(dom, weights, beta, sigma, &cfg)?;
    let ok = s.mixture_rel <= 1e-9
        && s.renormalized_rel <= 1e-9
        && s.step1_max_abs <= 1e-10
        && s.orthogonality_max <= 1e-9
        && s.eloc_violations == 0
        && s.property1
        && (s.property3 || !s.property3_enforced);
    let margin = (1e-9 - s.mixture_rel.max(s.renormalized_rel)).min(1e-10 - s.step1_max_abs);
    Ok(b.finish(pass_if(ok), margin, serde_json::to_value(&s).expect("json")))
}

/// Constant making 1+z cos(x+y) ≥ exp(−z sin x sin y/(1+z cos x) − D|z|y²)(1+z cos x) for
/// |z| < 1/8: 4/7 from the cos y − 1 term plus 32/49 from the quadratic remainder.
pub const D4_DERIVED: f64 = 4.0 / 7.0 + 32.0 / 49.0;

/// Smallest D for one (x,y,z); −∞ when y = 0.
pub fn claim31_needed_d(x: f64, y: f64, z: f64) -> f64 {
    if y == 0.0 || z == 0.0 {
        return f64::NEG_INFINITY;
    }
    let lhs = (1.0 + z * (x + y).cos()).ln() - (1.0 + z * x.cos()).ln();
    let lin = -z * x.sin() * y.sin() / (1.0 + z * x.cos());
    (lin - lhs) / (z.abs() * y * y)
}

pub fn claim31_margin(x: f64, y: f64, z: f64, d: f64) -> f64 {
    let lhs = 1.0 + z * (x + y).cos();
    let rhs = (-(z * x.sin() * y.sin()) / (1.0 + z * x.cos()) - d * z.abs() * y * y).exp() * (1.0 + z * x.cos());
    lhs - rhs
}

/// [a]_{2π} ∈ [−π, π).
pub fn wrap_2pi(a: f64) -> f64 {
    let b = (a + PI).rem_euclid(2.0 * PI) - PI;
    if b >= PI {
        -PI
    } else {
        b
    }
}

pub fn check_claim31_grid(n: usize) -> CheckReport {
    let b = Builder::new("identities.double-cos", "double cosine inequality", Profile::Paper, json!({"grid": n}))
        .tol("D4_derived", D4_DERIVED);
    let zs: Vec<f64> = (1..=n).flat_map(|i| {
        let z = 0.125 * i as f64 / (n as f64 + 1.0);
        [z, -z]
    }).collect();
    let (worst_d, worst_margin) = zs
        .par_iter()
        .map(|&z| {
            let mut wd = f64::NEG_INFINITY;
            let mut wm = f64::INFINITY;
            for i in 0..n {
                let x = -PI + 2.0 * PI * i as f64 / n as f64;
                for j in 0..n {
                    let y = -3.0 * PI + 6.0 * PI * (j as f64 + 0.5) / n as f64;
                    wd = wd.max(claim31_needed_d(x, y, z));
                    // wrapped y gives the same cosines and sines
                    wm = wm.min(claim31_margin(x, wrap_2pi(y), z, D4_DERIVED));
                }
            }
            (wd, wm)
        })
        .reduce(|| (f64::NEG_INFINITY, f64::INFINITY), |a, b| (a.0.max(b.0), a.1.min(b.1)));
    let z0 = claim31_margin(0.3, 1.0, 0.0, D4_DERIVED);
    let ex = claim31_margin(0.0, PI / 4.0, 0.1, D4_DERIVED);
    let ok = worst_d <= D4_DERIVED && worst_margin >= -1e-15 && z0 == 0.0 && ex > 0.0;
    b.finish(pass_if(ok), D4_DERIVED - worst_d, json!({"empirical_D4": worst_d, "min_margin": worst_margin, "z0_margin": z0, "example_margin": ex}))
}

pub fn check_wrap_triangle(seed: u64, n: usize) -> CheckReport {
    let b = Builder::new("identities.wrap-triangle", "wrapped triangle inequality", Profile::Paper, json!({"seed": seed, "n": n}));
    let mut rng = stream_rng(seed, 77);
    let mut worst = f64::INFINITY;
    for _ in 0..n {
        let (x, y) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let slack = wrap_2pi(x).abs() + wrap_2pi(y).abs() - wrap_2pi(x + y).abs();
        worst = worst.min(slack);
    }
    b.finish(pass_if(worst >= -1e-12), worst, json!({"min_slack": worst}))
}

/// Edge-decomposition chain: ⟨σ,ϱ⟩ = Σc_e∇σ_e with |c_e| ≤ ½‖ϱ‖², edges inside D(ϱ), then
/// Cauchy–Schwarz and the scale-disjointness sum.
#[derive(Clone, Debug, Serialize)]
pub struct ChainReport {
    pub decomposition_residual: f64,
    pub coeff_bound_ok: bool,
    pub edges_in_d: bool,
    pub cauchy_schwarz_ok: bool,
    pub scale_sum: f64,
    pub grad_norm: f64,
    pub wrapped_ok: bool,
}

pub fn claim32_chain(rhos: &[ChargeDensity], sigma: &[f64], dom: &LatticeDomain) -> Result<ChainReport> {
    let mut rep = ChainReport {
        decomposition_residual: 0.0,
        coeff_bound_ok: true,
        edges_in_d: true,
        cauchy_schwarz_ok: true,
        scale_sum: 0.0,
        grad_norm: dom.dirichlet_form(sigma)?,
        wrapped_ok: true,
    };
    for r in rhos {
        let dec = neutral_edge_decomposition(r, dom)?;
        let nb = center_and_d(r, dom);
        let in_d = |x: usize| nb.set.binary_search(&x).is_ok();
        let val: f64 = dec.iter().map(|(&(j, l), &c)| c as f64 * (sigma[j] - sigma[l])).sum();
        let pair = r.pair(sigma);
        rep.decomposition_residual = rep.decomposition_residual.max((val - pair).abs());
        let half = 0.5 * r.norm2sq() as f64;
        rep.coeff_bound_ok &= dec.values().all(|&c| (c.abs() as f64) <= half);
        rep.edges_in_d &= dec.keys().all(|&(j, l)| in_d(j) && in_d(l));
        let mut local = 0.0;
        let mut edges = 0usize;
        dom.for_each_edge(&mut |j, l, m| {
            if in_d(j) && in_d(l) {
                local += m as f64 * (sigma[j] - sigma[l]).powi(2);
                edges += m as usize;
            }
        });
        let cs = nb.set.len() as f64 * (r.norm2sq() as f64).powi(2) * local;
        rep.cauchy_schwarz_ok &= pair * pair <= cs * (1.0 + 1e-12) + 1e-12;
        // wrapped variant: |[⟨σ,ϱ⟩]| ≤ Σ|c_e||[∇σ_e]|, then ≤ 2|D|Σc²[∇σ]²
        let wsum: f64 = dec.iter().map(|(&(j, l), &c)| (c.abs() as f64) * wrap_2pi(sigma[j] - sigma[l]).abs()).sum();
        let w2: f64 = dec.iter().map(|(&(j, l), &c)| (c * c) as f64 * wrap_2pi(sigma[j] - sigma[l]).powi(2)).sum();
        let wp = wrap_2pi(pair).abs();
        rep.wrapped_ok &= wp <= wsum + 1e-12 && wp * wp <= 2.0 * nb.set.len() as f64 * w2 + 1e-12;
        rep.scale_sum += local / (r.diameter(dom) as f64 + 1.0);
        let _ = edges;
    }
    Ok(rep)
}

/// Claim-3.2 chain on an ensemble of well-separated dipoles with a random σ.
pub fn check_claim32(seed: u64) -> Result<CheckReport> {
    let b = Builder::new("identities.sigma-chain", "edge decomposition chain", Profile::Paper, json!({"seed": seed}));
    let dom = LatticeDomain::free(16);
    let mut rng = stream_rng(seed, 32);
    let sigma: Vec<f64> = (0..dom.n()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let rhos = vec![
        ChargeDensity::from_sites(&dom, &[((1, 1), 1), ((1, 2), -1)])?,
        ChargeDensity::from_sites(&dom, &[((8, 8), 2), ((9, 8), -1), ((8, 10), -1)])?,
        ChargeDensity::from_sites(&dom, &[((14, 1), 1), ((14, 3), -1)])?,
        ChargeDensity::from_sites(&dom, &[((2, 13), 1), ((5, 13), -2), ((4, 14), 1)])?,
    ];
    let c = claim32_chain(&rhos, &sigma, &dom)?;
    let ok = c.decomposition_residual < 1e-12 && c.coeff_bound_ok && c.edges_in_d && c.cauchy_schwarz_ok && c.wrapped_ok && c.scale_sum <= c.grad_norm;
    Ok(b.finish(pass_if(ok), c.grad_norm - c.scale_sum, serde_json::to_value(&c).expect("json")))
}

/// Wrapped gradient of the Villain shift versus the rotated torus gradient:
/// Σ_{edges}[∇σ]_{2π}² ≤ (2π)²⟨∂₁F_y, G_{2L}∂₁F_y⟩.
pub fn check_villain_shift_chain(l: usize, y: (usize, usize)) -> Result<CheckReport> {
    let b = Builder::new("identities.villain-shift-chain", "wrapped Villain shift gradient", Profile::Paper, json!({"L": l, "y": [y.0, y.1]}));
    let dom = LatticeDomain::free(l);
    let op = GreenOperator::new(&dom)?;
    let fy = f_y(l, y)?;
    let sigma: Vec<f64> = op.apply(&fy)?.iter().map(|x| -2.0 * PI * x).collect();
    let mut wrapped = 0.0;
    dom.for_each_edge(&mut |j, k, m| wrapped += m as f64 * wrap_2pi(sigma[j] - sigma[k]).powi(2));
    let l2 = 2 * l;
    let per = LatticeDomain::periodic(l2);
    let gp = GreenOperator::new(&per)?;
    let d1 = DifferenceOps::new(l2)?.d(1, &big_f_y(l, y)?);
    let rhs = 4.0 * PI * PI * gp.quadratic_form(&d1)?;
    let ok = wrapped <= rhs * (1.0 + 1e-10) + 1e-20;
    Ok(b.finish(pass_if(ok), rhs - wrapped, json!({"wrapped_grad_sq": wrapped, "bound": rhs, "log_scale": ((l - y.0 + 1) as f64).ln()})))
}

/// The Gaussian oracle against MC on a random mixture term.
pub fn check_oracle_mc(seed: u64) -> Result<CheckReport> {
    let b = Builder::new("identities.gaussian-oracle-mc", "closed-form Gaussian oracle", Profile::Paper, json!({"seed": seed})).tol("mc_se", 3.0);
    let dom = LatticeDomain::free(3);
    let beta = 0.7;
    let n = dom.n();
    let d = |e: &[(usize, f64)]| {
        let mut u = vec![0.0; n];
        for &(j, x) in e {
            u[j] = x;
        }
        u
    };
    let factors = vec![(0.6, d(&[(0, 1.0), (4, -1.0)]), 0.3), (-0.4, d(&[(8, 2.0), (5, -1.0), (7, -1.0)]), -1.1), (0.5, d(&[(2, 1.0)]), 0.0)];
    let or = GaussianOracle::new(&dom, beta, 0)?;
    let exact = or.cos_product(&factors);
    let s = GffSampler::new(&dom, beta, 0)?;
    let xs = s.map_samples(200_000, seed, 8, |phi| {
        factors.iter().map(|(k, u, sh)| 1.0 + k * (phi.iter().zip(u).map(|(p, x)| p * x).sum::<f64>() + sh).cos()).product::<f64>()
    });
    let e = batch_means(&xs);
    let z = e.z_score(exact, 0.0);
    Ok(b.finish(pass_if(z <= 3.0), 3.0 - z, json!({"exact": exact, "mc": e, "z": z})))
}

/// E_λ[e^{⟨φ,f⟩}] through the shift identity, on Fourier oracles.
pub fn check_change_of_variables() -> Result<CheckReport> {
    let b = Builder::new("identities.shift-identity", "change of variables", Profile::Paper, json!({"L": 2, "beta": 0.8})).tol("rel", 1e-12);
    let dom = LatticeDomain::free(2);
    let op = GreenOperator::new(&dom)?;
    let beta = 0.8;
    let w = vec![TrigWeight::fejer(3)?; 4];
    let f = vec![0.5, 0.0, 0.0, -0.5];
    let zero = vec![0.0; 4];
    let sigma = ShiftField::solve(&dom, &op, &f, beta, 0)?.sigma;
    let z0 = weighted_fourier(&op, beta, &w, &zero, &zero, 1e6)?;
    let lhs = weighted_fourier(&op, beta, &w, &f, &zero, 1e6)? / z0;
    let rhs = gff_laplace_exact(&op, &f, beta)? * weighted_fourier(&op, beta, &w, &zero, &sigma, 1e6)? / z0;
    let rel = (lhs - rhs).abs() / lhs.abs();
    Ok(b.equality(rel, 1e-12, json!({"lhs": lhs, "rhs": rhs})))
}

pub fn identities_suite(profile: Profile, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = vec![check_complex_translation_1d(1.0, 0.3, &[0.0], 1.0), check_complex_translation_1d(2.0, -0.7, &[0.1, 0.9, -0.4], 0.6)];
    out[1].id = "identities.complex-translation.1d-multi".into();
    // a = 0 and a spin wave on Free 2
    let dom2 = LatticeDomain::free(2);
    let tau = vec![1.0, 0.0, 0.0, -1.0];
    let mut r = check_complex_translation(&dom2, &tau, &[0.0; 4], 1.0, 20_000, seed)?;
    r.id = "identities.complex-translation.zero-shift".into();
    out.push(r);
    let dip = ChargeDensity::new(&dom2, &[(0, 1), (3, -1)])?;
    let (sw, _, _) = spinwave_for_member(0, std::slice::from_ref(&dip), 1.0, &dom2, &profile.cover())?;
    out.push(check_complex_translation(&dom2, &tau, &sw.a, 1.0, 100_000, seed)?);
    let dom3 = LatticeDomain::free(3);
    let mut rng = stream_rng(seed, 3);
    let mut t3: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = t3.iter().sum::<f64>() / 9.0;
    t3.iter_mut().for_each(|x| *x -= m);
    let a3: Vec<f64> = (0..9).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut r = check_complex_translation(&dom3, &t3, &a3, 0.9, 100_000, seed)?;
    r.id = "identities.complex-translation.free3".into();
    out.push(r);

    out.push(check_thm234_pipeline("identities.pipeline.constant", &dom2, &vec![TrigWeight::constant(); 4], 1.0, &[0.0; 4], profile)?);
    out.push(check_thm234_pipeline("identities.pipeline.fejer2", &dom2, &vec![TrigWeight::fejer(2)?; 4], 0.5, &[0.0; 4], profile)?);
    let sig: Vec<f64> = (0..4).map(|_| rng.random_range(-PI..PI)).collect();
    out.push(check_thm234_pipeline("identities.pipeline.fejer2-sigma", &dom2, &vec![TrigWeight::fejer(2)?; 4], 0.5, &sig, profile)?);
    let sig3: Vec<f64> = (0..9).map(|_| rng.random_range(-PI..PI)).collect();
    out.push(check_thm234_pipeline("identities.pipeline.fejer2-free3", &dom3, &vec![TrigWeight::fejer(2)?; 9], 0.4, &sig3, profile)?);
    out.push(check_thm234_pipeline("identities.pipeline.fejer3", &dom2, &vec![TrigWeight::fejer(3)?; 4], 0.5, &sig, profile)?);

    out.push(check_claim31_grid(96));
    out.push(check_wrap_triangle(seed, 100_000));
    out.push(check_claim32(seed)?);
    out.push(check_villain_shift_chain(6, (1, 2))?);
    out.push(check_oracle_mc(seed)?);
    out.push(check_change_of_variables()?);
    Ok(out)
}

/// (a) E^IV[e^{⟨m,f⟩}] ≤ exp(⟨f,Gf⟩/2β), exact, with truncation mass below 1e-10.
pub fn check_iv_upper_bound() -> Result<CheckReport> {
    let betas = [0.05, 0.2, 1.0, 5.0];
    let b = Builder::new("bounds.a.iv-upper", "IV Laplace upper bound", Profile::Paper, json!({"betas": betas, "K": 10})).tol("truncation", 1e-10);
    let mut rows = Vec::new();
    let mut worst = f64::INFINITY;
    let mut trunc_ok = true;
    let path = SimpleGraph::path(2);
    let d2 = LatticeDomain::free(2);
    let d3 = LatticeDomain::free(3);
    let mut f3 = vec![0.0; 9];
    f3[0] = 0.7;
    f3[4] = 0.4;
    f3[8] = -1.1;
    let cases: Vec<(&str, &dyn Graph, Vec<f64>)> = vec![("path2", &path, vec![1.0, -1.0]), ("free2", &d2, vec![0.5, -0.2, 0.0, -0.3]), ("free3", &d3, f3)];
    for (name, g, f) in cases {
        let op = GreenOperator::for_graph(g)?;
        for &beta in &betas {
            let r = enumerate_iv(g, beta, 0, 10, &f)?;
            let bound = (op.quadratic_form(&f)? / (2.0 * beta)).exp();
            let slack = (bound - r.mean_exp) / bound;
            worst = worst.min(slack);
            trunc_ok &= r.truncation < 1e-10;
            rows.push(json!({"graph": name, "beta": beta, "iv": r.mean_exp, "bound": bound, "truncation": r.truncation, "method": r.method}));
        }
    }
    Ok(b.finish(pass_if(worst >= -1e-12 && trunc_ok), worst, Value::Array(rows)))
}

/// (b) log E^IV / ((1/2β)⟨f,Gf⟩) on Free 4 across β: report plus trend assertion.
pub fn check_iv_ratio_trend() -> Result<Vec<CheckReport>> {
    let betas = [1.0, 0.4, 0.2, 0.1, 0.05];
    let eps = 0.1;
    let rb = Builder::new("bounds.b.ratio", "IV lower bound surrogate", Profile::Paper, json!({"betas": betas, "L": 4, "eps": eps})).tol("lower", 1.0 / (1.0 + eps));
    let tb = Builder::new("bounds.b.trend", "IV ratio increases as β decreases", Profile::Paper, json!({"betas": betas, "L": 4}));
    let dom = LatticeDomain::free(4);
    let op = GreenOperator::new(&dom)?;
    let mut f = vec![0.0; 16];
    f[0] = 1.0;
    f[15] = -1.0;
    let q = op.quadratic_form(&f)?;
    let rows: Vec<(f64, f64, &'static str)> = betas
        .par_iter()
        .map(|&beta| {
            let r = enumerate_iv(&dom, beta, 0, 10, &f)?;
            Ok((beta, r.mean_exp.ln() / (q / (2.0 * beta)), if r.method == crate::fields::IvMethod::Dual { "dual" } else { "transfer" }))
        })
        .collect::<Result<_>>()?;
    let last = rows.last().unwrap().1;
    let rep = rb.finish(
            Status::ReportOnly,
            last - 1.0 / (1.0 + eps),
            json!({"rows": rows.iter().map(|r| json!({"beta": r.0, "ratio": r.1, "method": r.2})).collect::<Vec<_>>(), "in_window_at_smallest_beta": last > 1.0 / (1.0 + eps) && last <= 1.0 + 1e-12}),
        );
    let increasing = rows.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12);
    let min_step = rows.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::INFINITY, f64::min);
    let trend = tb.finish(pass_if(increasing), min_step, json!({"ratios": rows.iter().map(|r| r.1).collect::<Vec<_>>()}));
    Ok(vec![rep, trend])
}

/// (c) dE/dη ≤ 0 for the sine-Gordon measure.
pub fn check_sine_gordon(seed: u64) -> Result<Vec<CheckReport>> {
    let etas: Vec<f64> = (0..=12).map(|i| 0.25 * i as f64).collect();
    let b = Builder::new("bounds.c.sine-gordon-pair", "sine-Gordon monotonicity", Profile::Paper, json!({"beta": 1.0, "t": 0.6, "etas": etas}));
    let h = 1e-3;
    let ders: Vec<f64> = etas.par_iter().map(|&e| (sine_gordon_pair(1.0, e + h, 0.6) - sine_gordon_pair(1.0, (e - h).max(0.0), 0.6)) / (e + h - (e - h).max(0.0))).collect();
    let worst = ders.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pair = b.tol("fd_abs", 1e-9).finish(pass_if(worst <= 1e-9), -worst, json!({"derivatives": ders}));
    let mc = Builder::new("bounds.c.sine-gordon-free3", "sine-Gordon monotonicity", Profile::Paper, json!({"beta": 1.0, "samples": 200_000, "seed": seed}))
        .tol("mc_se", 3.0);
    let dom = LatticeDomain::free(3);
    let s = GffSampler::new(&dom, 1.0, 0)?;
    let mut f = vec![0.0; 9];
    f[0] = 0.8;
    f[8] = -0.8;
    let mut rows = Vec::new();
    let mut worst_z = f64::NEG_INFINITY;
    for (i, &eta) in [0.0, 0.5, 1.0].iter().enumerate() {
        let e = sine_gordon_derivative_mc(&s, &f, eta, 0.05, 200_000, seed.wrapping_add(i as u64));
        let z = if e.se > 0.0 { e.mean / e.se } else { 0.0 };
        worst_z = worst_z.max(z);
        rows.push(json!({"eta": eta, "derivative": e, "z": z}));
    }
    let mc = mc.finish(pass_if(worst_z <= 3.0), 3.0 - worst_z, Value::Array(rows));
    Ok(vec![pair, mc])
}

/// (d) Fejér-weighted GFF at β/(2π)² against the IV value as N grows.
pub fn check_fejer_limit() -> Result<CheckReport> {
    let ns = [4usize, 8, 16, 32];
    let beta = 1.0;
    let b = Builder::new("bounds.d.fejer-limit", "summability-kernel limit", Profile::Paper, json!({"N": ns, "beta": beta}));
    let path = SimpleGraph::path(2);
    let dom = LatticeDomain::free(2);
    let cases: Vec<(&str, &dyn Graph, Vec<f64>)> = vec![("path2", &path, vec![0.5, -0.5]), ("free2", &dom, vec![0.6, 0.0, 0.0, -0.6])];
    let mut rows = Vec::new();
    let mut ok = true;
    let mut margin = f64::INFINITY;
    for (name, g, f) in cases {
        let op = GreenOperator::for_graph(g)?;
        let iv = enumerate_iv(g, beta, 0, 12, &f)?.mean_exp;
        let bw = beta / (4.0 * PI * PI);
        let fw: Vec<f64> = f.iter().map(|x| x / (2.0 * PI)).collect();
        let zero = vec![0.0; f.len()];
        let errs: Vec<f64> = ns
            .iter()
            .map(|&nn| {
                let w = vec![TrigWeight::fejer(nn)?; f.len()];
                let num = weighted_fourier(&op, bw, &w, &fw, &zero, 1e7)?;
                let den = weighted_fourier(&op, bw, &w, &zero, &zero, 1e7)?;
                Ok((num / den - iv).abs())
            })
            .collect::<Result<_>>()?;
        ok &= errs.windows(2).all(|w| w[1] <= w[0]) && errs[3] < errs[0];
        margin = margin.min(errs[0] - errs[3]);
        rows.push(json!({"graph": name, "iv": iv, "errors": errs}));
    }
    Ok(b.finish(pass_if(ok), margin, Value::Array(rows)))
}

/// (e) Villain E[cos θ_x] against distance to z, with the exponent C each point would need and
/// the envelope (dist+1)^{−C/β} for the smallest C covering every row.
pub fn check_villain_table(l: usize, betas: &[f64], seed: u64, sweeps: usize) -> Result<CheckReport> {
    let b = Builder::new("bounds.e.villain-table", "Villain power-law table", Profile::Paper, json!({"L": l, "betas": betas, "sweeps": sweeps, "seed": seed}));
    let dom = LatticeDomain::zero(l);
    let sites: Vec<(usize, usize)> = (0..l.div_ceil(2)).step_by(((l + 7) / 8).max(1)).map(|a| (a, a)).collect();
    let xs: Vec<usize> = sites.iter().map(|&(a, c)| dom.index(a, c)).collect();
    let z = dom.z().expect("zero domain");
    let dz = dom.bfs(z);
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &beta in betas {
        let est = villain_observables(&dom, beta, 6, &xs, seed, 8, sweeps, sweeps / 10)?;
        let mut c_fit = 0.0f64;
        let mut beta_rows = Vec::new();
        for (k, e) in est.iter().enumerate() {
            let dist = dz[xs[k]] as f64;
            // positive means cos(θ_x) is below every power law; reported as null
            let c_needed = (e.cos.mean > 0.0).then(|| -e.cos.mean.ln() * beta / (dist + 1.0).ln());
            if let Some(c) = c_needed {
                c_fit = c_fit.max(c);
            }
            beta_rows.push((sites[k], dist, e.cos, c_needed));
        }
        for (x, dist, e, c_needed) in beta_rows {
            let envelope = (dist + 1.0).powf(-c_fit / beta);
            rows.push(json!({"beta": beta, "x": [x.0, x.1], "dist": dist, "cos": e, "C_needed": c_needed, "envelope": envelope, "above_envelope": e.mean >= envelope * (1.0 - 1e-12)}));
        }
        fits.push(json!({"beta": beta, "C_fit": c_fit}));
    }
    Ok(b.finish(Status::ReportOnly, 0.0, json!({"rows": rows, "fits": fits})))
}

pub fn bounds_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = vec![check_iv_upper_bound()?];
    out.extend(check_iv_ratio_trend()?);
    out.extend(check_sine_gordon(seed)?);
    out.push(check_fejer_limit()?);
    out.push(check_villain_table(16, &[3.0], seed, 600)?);
    Ok(out)
}

pub fn duality_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let opt = DualityOptions { seed, ..Default::default() };
    for &beta in &[0.3, 1.0, 3.0] {
        let b = Builder::new(&format!("duality.l2.beta{beta}"), "Villain/IV duality", Profile::Paper, json!({"L": 2, "beta": beta, "x": [0, 0], "opt": opt}))
            .tol("abs", 1e-6);
        let r = duality_check(2, beta, (0, 0), &opt)?;
        out.push(b.equality(r.diff.abs(), 1e-6, serde_json::to_value(&r).expect("json")));
    }
    let b = Builder::new("duality.partition-function", "Villain partition function via dual sum", Profile::Paper, json!({"L": 2, "betas": [0.5, 1.0, 3.0]})).tol("rel", 1e-6);
    let ps: Vec<_> = [0.5, 1.0, 3.0].iter().map(|&bb| partition_identity_l2(bb, &opt)).collect::<Result<_>>()?;
    let worst = ps.iter().map(|p| p.rel_diff).fold(0.0, f64::max);
    out.push(b.equality(worst, 1e-6, serde_json::to_value(&ps).expect("json")));
    // δn ≡ 0 iff n is a dual gradient, all n ∈ {−1,0,1}^E at L=2
    let b = Builder::new("duality.closed-iff-gradient", "flow/height correspondence", Profile::Paper, json!({"L": 2}));
    let d = dual_lattice(2)?;
    let ne = d.primal.len();
    let total = 3usize.pow(ne as u32);
    let bad = (0..total)
        .into_par_iter()
        .filter(|&code| {
            let mut c = code;
            let n: Vec<i64> = (0..ne)
                .map(|_| {
                    let x = (c % 3) as i64 - 1;
                    c /= 3;
                    x
                })
                .collect();
            let closed = d.delta(&n).iter().all(|&x| x == 0);
            let pot = d.potential(&n, 0);
            closed != pot.is_some() || pot.is_some_and(|m| d.gradient(&m) != n)
        })
        .count();
    out.push(b.finish(pass_if(bad == 0), 0.0 - bad as f64, json!({"configurations": total, "mismatches": bad})));
    let b = Builder::new("duality.l4.mcmc", "Villain/IV duality", Profile::Paper, json!({"L": 4, "beta": 1.5, "x": [1, 1], "seed": seed})).tol("mc_se", 4.0);
    let r = duality_check(4, 1.5, (1, 1), &DualityOptions { sweeps: 3000, ..opt.clone() })?;
    let z = r.villain.z_score(r.iv.mean, r.iv.se);
    out.push(b.finish(pass_if(r.pass), 4.0 - z, serde_json::to_value(&r).expect("json")));
    Ok(out)
}

/// Runs a suite; reports are ordered by id.
pub fn run_suite(suite: Suite, profile: Profile, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Identities | Suite::All) {
        out.extend(identities_suite(profile, seed)?);
    }
    if matches!(suite, Suite::Bounds | Suite::All) {
        out.extend(bounds_suite(seed)?);
    }
    if matches!(suite, Suite::Duality | Suite::All) {
        out.extend(duality_suite(seed)?);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

pub fn all_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed())
}
