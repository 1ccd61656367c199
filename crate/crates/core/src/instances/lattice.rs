//! Jittered cubic lattices scaled to a target number of contacts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::geometry::{contact_count, ParticleConfig};

pub const MAX_BISECTIONS: usize = 200;
const MAX_DOUBLINGS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub m: usize,
    pub dx: f64,
    pub eps_x: f64,
    pub n_desired: f64,
    pub eps_desired: f64,
    pub radius: f64,
    pub delta_t: f64,
}

impl LatticeParams {
    /// `m³` unit spheres, spacing 2.5, jitter width 3, targeting `m³/2 ± m³/10`
    /// contacts with threshold `0.1` radii.
    pub fn with_defaults(m: usize) -> Self {
        let cube = (m * m * m) as f64;
        Self {
            m,
            dx: 2.5,
            eps_x: 3.0,
            n_desired: cube / 2.0,
            eps_desired: cube / 10.0,
            radius: 1.0,
            delta_t: 0.1,
        }
    }

    pub fn window(&self) -> (f64, f64) {
        (self.n_desired - self.eps_desired, self.n_desired + self.eps_desired)
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!("lattice side must be at least 2, got {}", self.m)));
        }
        if !(self.dx > 0.0 && self.radius > 0.0 && self.eps_x >= 0.0 && self.delta_t >= 0.0 && self.eps_desired >= 0.0) {
            return Err(Error::InvalidArgument("lattice parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LatticeResult {
    pub gamma: f64,
    /// Configuration with centers scaled by `gamma`.
    pub config: ParticleConfig,
    /// Unscaled jittered lattice.
    pub base: ParticleConfig,
    pub contacts: usize,
    pub in_window: bool,
    pub bisections: usize,
}

/// `m³` spheres on a lattice of spacing `dx` centered at the origin, each
/// coordinate jittered by `Uniform(-eps_x/2, eps_x/2)`.
pub fn jittered_lattice<R: Rng>(params: &LatticeParams, rng: &mut R) -> Result<ParticleConfig> {
    params.validate()?;
    let m = params.m;
    let offset = 0.5 * (m as f64 - 1.0) * params.dx;
    let half = 0.5 * params.eps_x;
    let mut centers = Vec::with_capacity(m * m * m);
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let base = [i, j, k].map(|v| v as f64 * params.dx - offset);
                centers.push(base.map(|v| {
                    if half > 0.0 {
                        v + rng.random_range(-half..half)
                    } else {
                        v
                    }
                }));
            }
        }
    }
    ParticleConfig::new(centers, vec![params.radius; m * m * m])
}

/// Finds a scale `γ` such that the scaled lattice has a contact count inside
/// `[n_desired - eps_desired, n_desired + eps_desired]`.
///
/// The count is nonincreasing in `γ`. A doubling phase brackets the window
/// (up to a scale with no contacts, down to one with too many) and
/// bisection on the midpoint narrows it. When integer jumps skip the window,
/// the scale whose count came closest is returned with `in_window = false`.
pub fn initialize_configuration<R: Rng>(params: &LatticeParams, rng: &mut R) -> Result<LatticeResult> {
    let base = jittered_lattice(params, rng)?;
    let (lo_t, hi_t) = params.window();
    let inside = |k: usize| (k as f64) >= lo_t && (k as f64) <= hi_t;
    let count = |gamma: f64| contact_count(&base.scaled(gamma), params.delta_t);
    let distance = |k: usize| {
        let k = k as f64;
        if k < lo_t {
            lo_t - k
        } else if k > hi_t {
            k - hi_t
        } else {
            0.0
        }
    };
    let mut nearest = (f64::INFINITY, 1.0, 0usize);
    let mut note = |gamma: f64, k: usize| {
        let d = distance(k);
        if d < nearest.0 {
            nearest = (d, gamma, k);
        }
    };
    let done = |gamma: f64, k: usize, bisections: usize| LatticeResult {
        gamma,
        config: base.scaled(gamma),
        base: base.clone(),
        contacts: k,
        in_window: true,
        bisections,
    };

    let k1 = count(1.0)?;
    if inside(k1) {
        return Ok(done(1.0, k1, 0));
    }
    note(1.0, k1);
    // bracket: count(g_lo) > window, count(g_hi) < window
    let (mut g_lo, mut g_hi);
    if (k1 as f64) > hi_t {
        g_lo = 1.0;
        g_hi = 1.0;
        let mut found = false;
        for _ in 0..MAX_DOUBLINGS {
            g_hi *= 2.0;
            let k = count(g_hi)?;
            if inside(k) {
                return Ok(done(g_hi, k, 0));
            }
            note(g_hi, k);
            if (k as f64) < lo_t || k == 0 {
                found = true;
                break;
            }
            g_lo = g_hi;
        }
        if !found {
            return Err(Error::InvalidArgument("could not separate the lattice".into()));
        }
    } else {
        g_hi = 1.0;
        g_lo = 1.0;
        let mut found = false;
        for _ in 0..MAX_DOUBLINGS {
            g_lo *= 0.5;
            let k = count(g_lo)?;
            if inside(k) {
                return Ok(done(g_lo, k, 0));
            }
            note(g_lo, k);
            if (k as f64) > hi_t {
                found = true;
                break;
            }
            g_hi = g_lo;
        }
        if !found {
            return Err(Error::InvalidArgument(format!(
                "contact window [{lo_t}, {hi_t}] is unreachable for this lattice"
            )));
        }
    }

    for it in 1..=MAX_BISECTIONS {
        let mid = 0.5 * (g_lo + g_hi);
        let k = count(mid)?;
        if inside(k) {
            return Ok(done(mid, k, it));
        }
        note(mid, k);
        if (k as f64) > hi_t {
            g_lo = mid;
        } else {
            g_hi = mid;
        }
    }
    let (_, gamma, k) = nearest;
    Ok(LatticeResult {
        gamma,
        config: base.scaled(gamma),
        base,
        contacts: k,
        in_window: false,
        bisections: MAX_BISECTIONS,
    })
}
