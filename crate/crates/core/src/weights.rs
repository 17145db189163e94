//! Even trigonometric single-site weights, the sub-Gaussian condition and z-coefficient bounds.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// λ(φ) = 1 + 2Σ_{q=1}^N λ̂(q)cos(qφ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigWeight {
    /// λ̂(1..=N).
    coeffs: Vec<f64>,
}

/// Config form of a weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum WeightSpec {
    Fejer {
        #[serde(rename = "N")]
        n: usize,
    },
    Coeffs { values: Vec<f64> },
}

impl WeightSpec {
    pub fn build(&self) -> Result<TrigWeight> {
        match self {
            WeightSpec::Fejer { n } => TrigWeight::fejer(*n),
            WeightSpec::Coeffs { values } => Ok(TrigWeight::new(values.clone())),
        }
    }
}

impl TrigWeight {
    /// Trailing zero coefficients are trimmed so N is the true degree.
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        TrigWeight { coeffs }
    }

    pub fn constant() -> Self {
        TrigWeight { coeffs: Vec::new() }
    }

    /// Fejér kernel: λ̂(q) = 1 − q/N.
    pub fn fejer(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::PreconditionViolated("Fejér kernel needs N ≥ 1".into()));
        }
        Ok(Self::new((1..=n).map(|q| 1.0 - q as f64 / n as f64).collect()))
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    /// λ̂(q) for any integer q (even extension, λ̂(0) = 1).
    pub fn hat(&self, q: i64) -> f64 {
        let q = q.unsigned_abs() as usize;
        if q == 0 {
            1.0
        } else {
            self.coeffs.get(q - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn evaluate(&self, phi: f64) -> f64 {
        1.0 + 2.0 * self.coeffs.iter().enumerate().map(|(i, c)| c * ((i + 1) as f64 * phi).cos()).sum::<f64>()
    }

    /// (1/2π)∫λ = λ̂(0); always 1 for this representation.
    pub fn is_normalized(&self) -> bool {
        true
    }
}

/// |λ̂(q)| ≤ Γ·exp[(η + θ/β)q²].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubGaussianParams {
    pub gamma: f64,
    pub eta: f64,
    pub theta: f64,
    pub beta: f64,
}

impl SubGaussianParams {
    pub fn new(gamma: f64, eta: f64, theta: f64, beta: f64) -> Result<Self> {
        if !(gamma > 0.0 && beta > 0.0 && (0.0..1.0 / 16.0).contains(&theta)) {
            return Err(Error::PreconditionViolated(format!("need Γ>0, β>0, 0≤θ<1/16; got Γ={gamma}, β={beta}, θ={theta}")));
        }
        Ok(SubGaussianParams { gamma, eta, theta, beta })
    }
}

/// Ok(()) when the condition holds for every 1 ≤ q ≤ N, else the first violating q.
pub fn is_sub_gaussian(w: &TrigWeight, p: &SubGaussianParams) -> std::result::Result<(), usize> {
    for (i, c) in w.coeffs().iter().enumerate() {
        let q = (i + 1) as f64;
        if c.abs() > p.gamma * ((p.eta + p.theta / p.beta) * q * q).exp() {
            return Err(i + 1);
        }
    }
    Ok(())
}

/// z = K·e^{−E}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZCoefficient {
    pub k: f64,
    pub energy: f64,
    pub z: f64,
}

impl ZCoefficient {
    pub fn new(k: f64, energy: f64) -> Self {
        ZCoefficient { k, energy, z: k * (-energy).exp() }
    }
}

/// Absolute constants used by the coefficient bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// Per-density data the z bounds need.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DensityStats {
    pub norm2sq: f64,
    pub d: usize,
    pub separated_total: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ZBoundReport {
    pub z: f64,
    /// E − (1/β)(‖ϱ‖²/16 + D₃Σ|S_k^sep|); the construction makes it nonnegative.
    pub eloc_margin: f64,
    pub eloc_holds: bool,
    /// γ with 1/16 − D₃/γ − θ > 0.
    pub gamma_choice: f64,
    pub c1: f64,
    /// −(c₁/β)(‖ϱ‖² + log₂(d+1)) − ln|z|; meaningful when c₁ > 0.
    pub eq53_margin: f64,
    pub eq53_holds: bool,
}

/// c₁ at this β from the coefficient-bound chain; positive only for small β.
pub fn c1_at(p: &SubGaussianParams, c: &DerivedConstants) -> (f64, f64) {
    let gap = 1.0 / 16.0 - p.theta;
    let gamma = 2.0 * (c.d3 / gap).max(1.0);
    let a = gap - c.d3 / gamma - p.beta * (p.gamma.ln() + p.eta);
    let b = c.d3 / (gamma * c.d1) - p.beta * c.d2;
    (gamma, a.min(b))
}

pub fn z_bound_check(zc: &ZCoefficient, s: &DensityStats, p: &SubGaussianParams, c: &DerivedConstants) -> ZBoundReport {
    let eloc_rhs = (s.norm2sq / 16.0 + c.d3 * s.separated_total as f64) / p.beta;
    let eloc_margin = zc.energy - eloc_rhs;
    let (gamma, c1) = c1_at(p, c);
    let lz = if zc.z == 0.0 { f64::NEG_INFINITY } else { zc.z.abs().ln() };
    let target = -(c1 / p.beta) * (s.norm2sq + ((s.d + 1) as f64).log2());
    let eq53_margin = if lz == f64::NEG_INFINITY { f64::INFINITY } else { target - lz };
    ZBoundReport {
        z: zc.z,
        eloc_margin,
        eloc_holds: eloc_margin >= -1e-12 * eloc_rhs.abs().max(1.0),
        gamma_choice: gamma,
        c1,
        eq53_margin,
        eq53_holds: c1 > 0.0 && eq53_margin >= 0.0,
    }
}

/// Largest β in the grid at which c₁ > 0 and every given instance has nonnegative margin.
pub fn empirical_beta0(grid: &[f64], p: &SubGaussianParams, c: &DerivedConstants, mut margins: impl FnMut(f64) -> bool) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &beta in grid {
        let pb = SubGaussianParams { beta, ..*p };
        if c1_at(&pb, c).1 > 0.0 && margins(beta) {
            best = Some(best.map_or(beta, |b: f64| b.max(beta)));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn evaluation() {
        assert_eq!(TrigWeight::constant().evaluate(1.3), 1.0);
        let f3 = TrigWeight::fejer(3).unwrap();
        assert!((f3.evaluate(0.0) - 3.0).abs() < 1e-14);
        assert_eq!(f3.degree(), 2);
        assert_eq!(TrigWeight::fejer(1).unwrap().degree(), 0);
        assert!(TrigWeight::fejer(0).is_err());
        for i in 0..100 {
            let phi = i as f64 * 0.37 - 10.0;
            assert_eq!(f3.evaluate(phi), f3.evaluate(-phi));
        }
    }

    #[test]
    fn fejer_nonnegative_and_sub_gaussian() {
        for n in 1..12 {
            let f = TrigWeight::fejer(n).unwrap();
            for i in 0..10_000 {
                let phi = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / 10_000.0;
                assert!(f.evaluate(phi) >= -1e-12);
            }
            let p = SubGaussianParams::new(1.0, 0.0, 0.0, 0.7).unwrap();
            assert_eq!(is_sub_gaussian(&f, &p), Ok(()));
        }
    }

    #[test]
    fn sub_gaussian_witness() {
        let w = TrigWeight::new(vec![0.5, 10.0]);
        let p = SubGaussianParams::new(1.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(is_sub_gaussian(&w, &p), Err(2));
        assert_eq!(is_sub_gaussian(&TrigWeight::new(vec![0.0, 0.0]), &p), Ok(()));
        assert!(SubGaussianParams::new(1.0, 0.0, 0.0625, 1.0).is_err());
    }

    #[test]
    fn spec_roundtrip() {
        let s: WeightSpec = serde_json::from_str(r#"{"type":"fejer","N":3}"#).unwrap();
        assert_eq!(s.build().unwrap(), TrigWeight::fejer(3).unwrap());
        let s: WeightSpec = serde_json::from_str(r#"{"type":"coeffs","values":[0.25]}"#).unwrap();
        assert_eq!(s.build().unwrap().hat(-1), 0.25);
        assert!(serde_json::from_str::<WeightSpec>(r#"{"type":"fejer","N":3,"x":1}"#).is_err());
    }

    #[test]
    fn z_zero_coefficient() {
        let zc = ZCoefficient::new(0.0, 0.5);
        let c = DerivedConstants { d1: 160.0, d2: 1.0, d3: 1.0 / 8192.0 };
        let p = SubGaussianParams::new(1.0, 0.0, 0.0, 0.01).unwrap();
        let r = z_bound_check(&zc, &DensityStats { norm2sq: 2.0, d: 1, separated_total: 0 }, &p, &c);
        assert_eq!(r.z, 0.0);
        assert!(r.eq53_margin.is_infinite());
    }

    proptest! {
        #[test]
        fn sub_gaussian_monotone(cs in prop::collection::vec(-3.0f64..3.0, 1..6), g in 0.1f64..3.0, th in 0.0f64..0.06, dg in 0.0f64..2.0, dth in 0.0f64..0.002, beta in 0.05f64..2.0) {
            let w = TrigWeight::new(cs);
            let p = SubGaussianParams::new(g, 0.0, th, beta).unwrap();
            if is_sub_gaussian(&w, &p).is_ok() {
                let pg = SubGaussianParams { gamma: g + dg, ..p };
                let pt = SubGaussianParams { theta: (th + dth).min(0.0624), ..p };
                prop_assert!(is_sub_gaussian(&w, &pg).is_ok());
                prop_assert!(is_sub_gaussian(&w, &pt).is_ok());
            }
        }

        #[test]
        fn z_magnitude(k in -5.0f64..5.0, e in 0.0f64..10.0) {
            let z = ZCoefficient::new(k, e);
            prop_assert!(z.z.abs() <= k.abs());
        }
    }
}
