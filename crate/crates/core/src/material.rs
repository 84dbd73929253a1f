//! Anisotropic small-strain law with a tension/compression spectral split.
//!
//! Tensors are plane 2×2 symmetric. Voigt matrices use engineering shear
//! strain `[exx, eyy, 2exy]` against stress `[sxx, syy, sxy]`.

use serde::{Deserialize, Serialize};

pub type Voigt = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Sym2 {
    pub const fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Sym2 { xx, yy, xy }
    }

    pub const fn zero() -> Self {
        Sym2::new(0.0, 0.0, 0.0)
    }

    pub const fn identity() -> Self {
        Sym2::new(1.0, 1.0, 0.0)
    }

    pub fn from_engineering(v: [f64; 3]) -> Self {
        Sym2::new(v[0], v[1], 0.5 * v[2])
    }

    pub fn components(&self) -> [f64; 3] {
        [self.xx, self.yy, self.xy]
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn ddot(&self, o: &Sym2) -> f64 {
        self.xx * o.xx + self.yy * o.yy + 2.0 * self.xy * o.xy
    }

    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn square(&self) -> Sym2 {
        Sym2::new(
            self.xx * self.xx + self.xy * self.xy,
            self.yy * self.yy + self.xy * self.xy,
            self.xy * (self.xx + self.yy),
        )
    }

    /// `a·b + b·a`, which is symmetric for symmetric inputs.
    pub fn sym_product(&self, b: &Sym2) -> Sym2 {
        Sym2::new(
            2.0 * (self.xx * b.xx + self.xy * b.xy),
            2.0 * (self.xy * b.xy + self.yy * b.yy),
            self.xx * b.xy + self.xy * b.yy + b.xx * self.xy + b.xy * self.yy,
        )
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(self.xx * s, self.yy * s, self.xy * s)
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx + o.xx, self.yy + o.yy, self.xy + o.xy)
    }

    pub fn sub(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx - o.xx, self.yy - o.yy, self.xy - o.xy)
    }

    pub fn dyad(n: [f64; 2]) -> Sym2 {
        Sym2::new(n[0] * n[0], n[1] * n[1], n[0] * n[1])
    }

    /// `Q·self·Qᵀ` for a rotation by `theta`.
    pub fn rotated(&self, theta: f64) -> Sym2 {
        let (s, c) = theta.sin_cos();
        let q = [[c, -s], [s, c]];
        let a = [[self.xx, self.xy], [self.xy, self.yy]];
        let mut r = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        r[i][j] += q[i][k] * a[k][l] * q[j][l];
                    }
                }
            }
        }
        Sym2::new(r[0][0], r[1][1], 0.5 * (r[0][1] + r[1][0]))
    }

    /// Eigenvalues (descending) and matching unit eigenvectors.
    pub fn eigen(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let m = 0.5 * (self.xx + self.yy);
        let h = 0.5 * (self.xx - self.yy);
        let r = h.hypot(self.xy);
        let theta = 0.5 * self.xy.atan2(h);
        let (s, c) = theta.sin_cos();
        ([m + r, m - r], [[c, s], [-s, c]])
    }
}

fn voigt_outer(a: &Sym2, b: &Sym2) -> Voigt {
    let av = a.components();
    let bv = b.components();
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = av[i] * bv[j];
        }
    }
    c
}

fn voigt_identity() -> Voigt {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]]
}

fn voigt_axpy(c: &mut Voigt, s: f64, a: &Voigt) {
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += s * a[i][j];
        }
    }
}

/// Voigt matrix of a linear map on symmetric tensors.
pub fn voigt_of_map(f: impl Fn(&Sym2) -> Sym2) -> Voigt {
    let basis = [
        Sym2::new(1.0, 0.0, 0.0),
        Sym2::new(0.0, 1.0, 0.0),
        Sym2::new(0.0, 0.0, 0.5),
    ];
    let mut c = [[0.0; 3]; 3];
    for (j, e) in basis.iter().enumerate() {
        let s = f(e).components();
        for i in 0..3 {
            c[i][j] = s[i];
        }
    }
    c
}

pub fn voigt_apply(c: &Voigt, eps: &Sym2) -> Sym2 {
    let e = [eps.xx, eps.yy, 2.0 * eps.xy];
    let mut s = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            s[i] += c[i][j] * e[j];
        }
    }
    Sym2::new(s[0], s[1], s[2])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub lambda: f64,
    pub mu: f64,
    pub chi: f64,
    pub xi: f64,
    pub alpha: f64,
    pub gc: f64,
    pub l: f64,
    pub kappa: f64,
    /// radians
    pub fiber_angle: f64,
}

impl MaterialParams {
    pub fn isotropic(lambda: f64, mu: f64, gc: f64, l: f64, kappa: f64) -> Self {
        MaterialParams {
            lambda,
            mu,
            chi: 0.0,
            xi: 0.0,
            alpha: 0.0,
            gc,
            l,
            kappa,
            fiber_angle: 0.0,
        }
    }

    pub fn director(&self) -> [f64; 2] {
        let (s, c) = self.fiber_angle.sin_cos();
        [c, s]
    }

    pub fn structural(&self) -> Sym2 {
        Sym2::dyad(self.director())
    }

    /// Copy with the isotropic moduli multiplied by `s` (Young's modulus scaling).
    pub fn scaled(&self, s: f64) -> Self {
        MaterialParams {
            lambda: self.lambda * s,
            mu: self.mu * s,
            ..*self
        }
    }

    pub fn youngs_modulus(&self) -> f64 {
        self.mu * (3.0 * self.lambda + 2.0 * self.mu) / (self.lambda + self.mu)
    }

    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.lambda > 0.0, "lambda must be positive"),
            (self.mu > 0.0, "mu must be positive"),
            (self.gc > 0.0, "Gc must be positive"),
            (self.l > 0.0, "length scale must be positive"),
            (self.kappa > 0.0 && self.kappa < 1e-2, "kappa must lie in (0, 1e-2)"),
            (self.chi >= 0.0, "chi must be non-negative"),
            (self.alpha >= 0.0, "alpha must be non-negative"),
            (self.xi >= 0.0, "xi must be non-negative"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(msg.to_string());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Invariants {
    pub i1: f64,
    pub i2: f64,
    pub i4: f64,
    pub i5: f64,
}

pub fn invariants(eps: &Sym2, m: &Sym2) -> Invariants {
    let e2 = eps.square();
    Invariants {
        i1: eps.trace(),
        i2: e2.trace(),
        i4: eps.ddot(m),
        i5: e2.ddot(m),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SplitStrain {
    pub eps_plus: Sym2,
    pub eps_minus: Sym2,
    pub principal_values: [f64; 2],
    pub principal_dirs: [[f64; 2]; 2],
}

fn pos(x: f64) -> f64 {
    0.5 * (x + x.abs())
}

fn neg(x: f64) -> f64 {
    0.5 * (x - x.abs())
}

fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn spectral_split(eps: &Sym2) -> SplitStrain {
    let (vals, dirs) = eps.eigen();
    let m0 = Sym2::dyad(dirs[0]);
    let m1 = Sym2::dyad(dirs[1]);
    SplitStrain {
        eps_plus: m0.scale(pos(vals[0])).add(&m1.scale(pos(vals[1]))),
        eps_minus: m0.scale(neg(vals[0])).add(&m1.scale(neg(vals[1]))),
        principal_values: vals,
        principal_dirs: dirs,
    }
}

/// Projection derivatives `P± = ∂ε±/∂ε` in Voigt form.
pub fn projection_tangents(eps: &Sym2) -> (Voigt, Voigt) {
    let (mut vals, dirs) = eps.eigen();
    let m0 = Sym2::dyad(dirs[0]);
    let m1 = Sym2::dyad(dirs[1]);
    let norm = eps.norm();
    let delta = 1e-8 * norm;
    if vals[0] - vals[1] < delta {
        vals[0] += delta;
        vals[1] -= delta;
    }
    let gap = vals[0] - vals[1];
    let ratio_plus = if gap > 0.0 {
        (pos(vals[0]) - pos(vals[1])) / gap
    } else {
        1.0
    };
    let o0 = voigt_outer(&m0, &m0);
    let o1 = voigt_outer(&m1, &m1);
    let mut rest = voigt_identity();
    voigt_axpy(&mut rest, -1.0, &o0);
    voigt_axpy(&mut rest, -1.0, &o1);

    let h0 = heaviside(vals[0]);
    let h1 = heaviside(vals[1]);
    let mut pp = [[0.0; 3]; 3];
    voigt_axpy(&mut pp, h0, &o0);
    voigt_axpy(&mut pp, h1, &o1);
    voigt_axpy(&mut pp, ratio_plus, &rest);
    let mut pm = [[0.0; 3]; 3];
    voigt_axpy(&mut pm, 1.0 - h0, &o0);
    voigt_axpy(&mut pm, 1.0 - h1, &o1);
    voigt_axpy(&mut pm, 1.0 - ratio_plus, &rest);
    (pp, pm)
}

pub fn degradation(d_plus: f64, kappa: f64) -> f64 {
    (1.0 - kappa) * d_plus * d_plus + kappa
}

/// `(Ψ_iso+, Ψ_iso−, Ψ_aniso)` of an undegraded state.
pub fn energy_parts(eps: &Sym2, p: &MaterialParams) -> (f64, f64, f64) {
    let m = p.structural();
    let inv = invariants(eps, &m);
    let split = spectral_split(eps);
    let iso_plus = 0.5 * p.lambda * pos(inv.i1).powi(2) + p.mu * split.eps_plus.square().trace();
    let iso_minus = 0.5 * p.lambda * neg(inv.i1).powi(2) + p.mu * split.eps_minus.square().trace();
    let aniso = 0.5 * p.chi * inv.i4 * inv.i4 + 2.0 * p.xi * inv.i5;
    (iso_plus, iso_minus, aniso)
}

pub fn bulk_energy_density(eps: &Sym2, d_plus: f64, p: &MaterialParams) -> f64 {
    let (ip, im, an) = energy_parts(eps, p);
    degradation(d_plus, p.kappa) * (ip + an) + im
}

pub fn stress(eps: &Sym2, d_plus: f64, p: &MaterialParams) -> Sym2 {
    let m = p.structural();
    let inv = invariants(eps, &m);
    let split = spectral_split(eps);
    let i = Sym2::identity();
    let iso_plus = i.scale(p.lambda * pos(inv.i1)).add(&split.eps_plus.scale(2.0 * p.mu));
    let iso_minus = i.scale(p.lambda * neg(inv.i1)).add(&split.eps_minus.scale(2.0 * p.mu));
    let aniso = m.scale(p.chi * inv.i4).add(&eps.sym_product(&m).scale(2.0 * p.xi));
    iso_plus
        .add(&aniso)
        .scale(degradation(d_plus, p.kappa))
        .add(&iso_minus)
}

pub fn tangent(eps: &Sym2, d_plus: f64, p: &MaterialParams) -> Voigt {
    let m = p.structural();
    let i = Sym2::identity();
    let h = heaviside(eps.trace());
    let (pp, pm) = projection_tangents(eps);
    let ii = voigt_outer(&i, &i);
    let mm = voigt_outer(&m, &m);
    let mprod = voigt_of_map(|e| e.sym_product(&m));

    let mut degraded = [[0.0; 3]; 3];
    voigt_axpy(&mut degraded, p.lambda * h, &ii);
    voigt_axpy(&mut degraded, 2.0 * p.mu, &pp);
    voigt_axpy(&mut degraded, p.chi, &mm);
    voigt_axpy(&mut degraded, 2.0 * p.xi, &mprod);

    let mut c = [[0.0; 3]; 3];
    voigt_axpy(&mut c, degradation(d_plus, p.kappa), &degraded);
    voigt_axpy(&mut c, p.lambda * (1.0 - h), &ii);
    voigt_axpy(&mut c, 2.0 * p.mu, &pm);
    c
}

pub fn crack_driving_state(eps: &Sym2, p: &MaterialParams) -> f64 {
    let (ip, _, an) = energy_parts(eps, p);
    p.l * (ip + an) / p.gc
}

pub fn update_history(h_old: f64, driving: f64) -> f64 {
    h_old.max(driving)
}

/// Per-element, per-quadrature-point history.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryField {
    pub values: Vec<[f64; 4]>,
}

impl HistoryField {
    pub fn zeros(n_elements: usize) -> Self {
        HistoryField {
            values: vec![[0.0; 4]; n_elements],
        }
    }

    pub fn max_with(&self, other: &HistoryField) -> HistoryField {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let mut r = [0.0; 4];
                for q in 0..4 {
                    r[q] = update_history(a[q], b[q]);
                }
                r
            })
            .collect();
        HistoryField { values }
    }

    pub fn is_monotone_from(&self, older: &HistoryField) -> bool {
        self.values
            .iter()
            .zip(&older.values)
            .all(|(a, b)| (0..4).all(|q| a[q] >= b[q]))
    }
}
