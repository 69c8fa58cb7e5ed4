//! ε-LDP randomizers: Laplace noise for real vectors, randomized response for
//! finite alphabets, and the L1 clipping that bounds Laplace sensitivity.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::divergence::DiscreteMechanism;
use crate::error::{invalid, Error, Result};
use crate::tensor::l1_norm;

/// Privacy budget ε. `Infinite` disables noise entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyBudget {
    Finite(f64),
    Infinite,
}

impl PrivacyBudget {
    pub fn finite(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon > 0.0 {
            Ok(Self::Finite(epsilon))
        } else if epsilon == f64::INFINITY {
            Ok(Self::Infinite)
        } else {
            invalid(format!("epsilon must be positive, got {epsilon}"))
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            Self::Finite(e) => Some(e),
            Self::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Self::Infinite)
    }

    /// Ordering key: finite budgets by value, infinity last.
    pub fn sort_key(&self) -> f64 {
        self.epsilon().unwrap_or(f64::INFINITY)
    }

    pub(crate) fn require_finite(&self, what: &str) -> Result<f64> {
        self.epsilon().ok_or_else(|| Error::InvalidArgument(format!("{what} needs a finite budget")))
    }
}

impl fmt::Display for PrivacyBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(e) => write!(f, "{e}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for PrivacyBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinite" | "infinity" | "off" => Ok(Self::Infinite),
            t => {
                let e: f64 = t.parse().map_err(|_| Error::InvalidArgument(format!("bad epsilon {s:?}")))?;
                Self::finite(e)
            }
        }
    }
}

impl Serialize for PrivacyBudget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(e) => s.serialize_f64(*e),
            Self::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PrivacyBudget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(e) => Self::finite(e),
            Raw::Text(t) => t.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// L1 clipping radius `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    radius: f64,
}

impl ClipSpec {
    pub fn l1(radius: f64) -> Result<Self> {
        if radius.is_finite() && radius > 0.0 {
            Ok(Self { radius })
        } else {
            invalid(format!("clip radius must be positive, got {radius}"))
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// One Laplace(0, scale) draw by inverting the CDF at a uniform point.
pub fn laplace_sample<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    // u in (-1/2, 1/2), excluding the endpoint where ln(0) blows up.
    let u = loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        if u > -0.5 {
            break u;
        }
    };
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Laplace scale `b = sensitivity / ε`, or `None` when noise is disabled.
pub fn laplace_scale(sensitivity: f64, budget: PrivacyBudget) -> Result<Option<f64>> {
    if !(sensitivity.is_finite() && sensitivity > 0.0) {
        return invalid(format!("sensitivity must be positive, got {sensitivity}"));
    }
    Ok(budget.epsilon().map(|e| sensitivity / e))
}

pub fn laplace_perturb<R: Rng + ?Sized>(
    v: &[f64],
    sensitivity: f64,
    budget: PrivacyBudget,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    if let Some(b) = laplace_scale(sensitivity, budget)? {
        for x in out.iter_mut() {
            *x += laplace_sample(rng, b);
        }
    }
    Ok(out)
}

/// `k`-ary randomized response: keep the true symbol with probability
/// `e^ε / (e^ε + k − 1)`, otherwise report one of the others uniformly.
pub fn randomized_response_matrix(k: usize, budget: PrivacyBudget) -> Result<DiscreteMechanism> {
    if k < 2 {
        return invalid(format!("randomized response needs k >= 2, got {k}"));
    }
    let eps = budget.require_finite("randomized response")?;
    let e = eps.exp();
    let denom = e + (k as f64 - 1.0);
    let keep = e / denom;
    let flip = 1.0 / denom;
    let rows = (0..k).map(|i| (0..k).map(|j| if i == j { keep } else { flip }).collect()).collect();
    DiscreteMechanism::new(rows)
}

/// Scales `v` onto the L1 ball of radius `S` when it lies outside it.
pub fn clip_l1(v: &[f64], spec: &ClipSpec) -> Vec<f64> {
    let norm = l1_norm(v);
    if norm <= spec.radius {
        return v.to_vec();
    }
    let scale = spec.radius / norm;
    v.iter().map(|x| x * scale).collect()
}
