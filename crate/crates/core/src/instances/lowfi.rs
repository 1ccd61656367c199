//! Cheaper approximations `Â` of the contact operator.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fundamental::{fundamental_quantity, CofaOptions};
use crate::operators::{DenseMatrix, Fidelity, LinearMap, MatVecOperator};

use super::mobility::MobilityModel;
use super::ContactGeometry;

/// Redraws of the random perturbation before giving up on positive
/// definiteness.
pub const MAX_PERTURB_DRAWS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LowFiScheme {
    /// `Â = A + δ S/‖S‖∞`, `S` random symmetric.
    Perturb { delta: f64 },
    /// As `Perturb` with `δ = factor · c(A)`.
    PerturbRelative { factor: f64 },
    /// `A` evaluated in single precision.
    Precision32,
    /// Pair coupling reach reduced to `cutoff · (r_i + r_j)`.
    Sparsify { cutoff: f64 },
}

impl LowFiScheme {
    pub fn tag(&self) -> &'static str {
        match self {
            LowFiScheme::Perturb { .. } => "perturb",
            LowFiScheme::PerturbRelative { .. } => "perturb-c",
            LowFiScheme::Precision32 => "precision32",
            LowFiScheme::Sparsify { .. } => "sparsify",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LowFiScheme::Perturb { delta } => delta >= 0.0 && delta.is_finite(),
            LowFiScheme::PerturbRelative { factor } => factor >= 0.0 && factor.is_finite(),
            LowFiScheme::Precision32 => true,
            LowFiScheme::Sparsify { cutoff } => cutoff >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid low-fidelity scheme `{self}`")))
        }
    }
}

impl fmt::Display for LowFiScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LowFiScheme::Perturb { delta } => write!(f, "perturb:{delta}"),
            LowFiScheme::PerturbRelative { factor } => write!(f, "perturb-c:{factor}"),
            LowFiScheme::Precision32 => write!(f, "precision32"),
            LowFiScheme::Sparsify { cutoff } => write!(f, "sparsify:{cutoff}"),
        }
    }
}

impl FromStr for LowFiScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (tag, arg) = match s.split_once(':') {
            Some((t, a)) => (t.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |name: &str| -> Result<f64> {
            let a = arg.ok_or_else(|| Error::InvalidArgument(format!("`{tag}` needs a {name}, e.g. `{tag}:0.1`")))?;
            a.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse {name} `{a}` in `{s}`")))
        };
        let scheme = match tag {
            "perturb" => LowFiScheme::Perturb { delta: num("delta")? },
            "perturb-c" => LowFiScheme::PerturbRelative { factor: num("factor")? },
            "precision32" if arg.is_none() => LowFiScheme::Precision32,
            "sparsify" => LowFiScheme::Sparsify { cutoff: num("cutoff")? },
            _ => return Err(Error::InvalidArgument(format!("unknown low-fidelity scheme `{s}`"))),
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

/// Realized low-fidelity operator.
#[derive(Clone, Debug)]
pub struct LowFidelity {
    pub operator: MatVecOperator,
    pub dense: Option<DenseMatrix>,
    /// Scheme parameters as realized (e.g. the absolute `delta` and the
    /// `c_est` it was derived from).
    pub params: BTreeMap<String, f64>,
}

/// Dense matrix stored and applied in `f32`.
#[derive(Clone, Debug)]
pub struct DenseF32(DMatrix<f32>);

impl DenseF32 {
    pub fn from_dense(a: &DenseMatrix) -> Self {
        Self(a.matrix().map(|v| v as f32))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::new(self.0.map(f64::from))
    }
}

impl LinearMap for DenseF32 {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.0.nrows();
        let mut acc = vec![0.0f32; n];
        for j in 0..n {
            let xj = x[j] as f32;
            if xj == 0.0 {
                continue;
            }
            for (o, a) in acc.iter_mut().zip(self.0.column(j).iter()) {
                *o += a * xj;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = f64::from(a);
        }
    }
}

/// Wraps a map so its inputs and outputs are rounded to `f32`.
#[derive(Clone, Debug)]
pub struct RoundedF32(pub Arc<dyn LinearMap>);

impl LinearMap for RoundedF32 {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let xr: Vec<f64> = x.iter().map(|&v| f64::from(v as f32)).collect();
        self.0.apply_into(&xr, out);
        out.iter_mut().for_each(|v| *v = f64::from(*v as f32));
    }
}

/// Random symmetric matrix with entries in `[-1, 1]`, scaled to unit
/// induced ∞-norm.
fn unit_symmetric<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut s: DMatrix<f64> = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-1.0..=1.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let norm = s.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if norm > 0.0 {
        s / norm
    } else {
        s
    }
}

fn perturb<R: Rng>(a: &DenseMatrix, delta: f64, rng: &mut R) -> Result<DenseMatrix> {
    for _ in 0..MAX_PERTURB_DRAWS {
        let cand = DenseMatrix::new(a.matrix() + unit_symmetric(a.dim(), rng) * delta);
        if cand.is_positive_definite() {
            return Ok(cand);
        }
    }
    Err(Error::NotPositiveDefinite(format!(
        "no positive-definite perturbation of size {delta} in {MAX_PERTURB_DRAWS} draws"
    )))
}

/// Builds `Â` for one instance.
///
/// `dense` is the dense `A` when available; `Perturb` schemes need it.
/// `geometry` is needed by `Sparsify` on coupled mobilities.
pub fn make_low_fidelity<R: Rng>(
    high: &MatVecOperator,
    dense: Option<&DenseMatrix>,
    geometry: Option<&ContactGeometry>,
    scheme: LowFiScheme,
    rng: &mut R,
) -> Result<LowFidelity> {
    scheme.validate()?;
    let n = high.dim();
    let mut params = BTreeMap::new();
    let same = |params| LowFidelity {
        operator: high.with_fidelity(Fidelity::Low),
        dense: dense.cloned(),
        params,
    };
    let need_dense = || {
        dense.ok_or_else(|| Error::DenseUnavailable(format!("scheme `{scheme}` needs the dense matrix")))
    };
    match scheme {
        LowFiScheme::Perturb { .. } | LowFiScheme::PerturbRelative { .. } => {
            let delta = match scheme {
                LowFiScheme::Perturb { delta } => delta,
                LowFiScheme::PerturbRelative { factor } => {
                    params.insert("factor".into(), factor);
                    let c = if n == 0 {
                        0.0
                    } else {
                        fundamental_quantity(need_dense()?, &CofaOptions::default())?.c_est
                    };
                    params.insert("c_est".into(), c);
                    factor * c
                }
                _ => unreachable!(),
            };
            params.insert("delta".into(), delta);
            if delta == 0.0 || n == 0 {
                return Ok(same(params));
            }
            let a_hat = perturb(need_dense()?, delta, rng)?;
            Ok(LowFidelity {
                operator: MatVecOperator::from_map(a_hat.clone(), Fidelity::Low),
                dense: Some(a_hat),
                params,
            })
        }
        LowFiScheme::Precision32 => {
            if let Some(a) = dense {
                let m = DenseF32::from_dense(a);
                let d = m.to_dense();
                Ok(LowFidelity {
                    operator: MatVecOperator::from_map(m, Fidelity::Low),
                    dense: Some(d),
                    params,
                })
            } else {
                Ok(LowFidelity {
                    operator: MatVecOperator::from_map(RoundedF32(Arc::clone(high.map())), Fidelity::Low),
                    dense: None,
                    params,
                })
            }
        }
        LowFiScheme::Sparsify { cutoff } => {
            params.insert("cutoff".into(), cutoff);
            let geometry = geometry
                .ok_or_else(|| Error::InvalidArgument("`sparsify` needs the contact geometry".into()))?;
            let model = match geometry.model {
                MobilityModel::RpyLike { eta, cutoff: c0 } if cutoff < c0 => MobilityModel::RpyLike { eta, cutoff },
                _ => return Ok(same(params)),
            };
            let coarse = ContactGeometry {
                model,
                ..geometry.clone()
            };
            let op = MatVecOperator::from_map(coarse.operator()?, Fidelity::Low);
            let dense_low = match dense {
                Some(_) => Some(op.to_dense(usize::MAX)?),
                None => None,
            };
            Ok(LowFidelity {
                operator: op,
                dense: dense_low,
                params,
            })
        }
    }
}
