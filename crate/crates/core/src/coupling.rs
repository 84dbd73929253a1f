//! Interface operators: Schur complements, Robin augmented stiffnesses and the
//! right-hand sides exchanged between the global and local problems.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dense_solve, mat_t_vec, mat_vec, SparseFactor, Triplets};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchurSource {
    Complementary,
    Local,
    Fictitious,
}

/// Dense Steklov-Poincaré operator on a list of interface dofs.
#[derive(Clone, Debug)]
pub struct SchurOperator {
    pub matrix: Mat<f64>,
    pub source: SchurSource,
    /// snapshot id of the state the operator was built from
    pub generation: u64,
    /// diagonal regularization added, zero if none
    pub shift: f64,
}

impl SchurOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                num = num.max((self.matrix[(i, j)] - self.matrix[(j, i)]).abs());
                den = den.max(self.matrix[(i, j)].abs());
            }
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// Adds `1e-8·tr(S)/n` to the diagonal when S has a (numerical) kernel.
    pub fn regularize(&mut self) -> Result<bool> {
        let n = self.dim();
        if n == 0 {
            return Ok(false);
        }
        let sym = Mat::from_fn(n, n, |i, j| 0.5 * (self.matrix[(i, j)] + self.matrix[(j, i)]));
        let ev = sym
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Singular(format!("eigenvalues: {e:?}")))?;
        let top = ev.last().copied().unwrap_or(0.0).abs();
        if ev[0] > 1e-10 * top {
            return Ok(false);
        }
        let trace: f64 = (0..n).map(|i| self.matrix[(i, i)]).sum();
        let s = 1e-8 * trace.abs().max(f64::MIN_POSITIVE) / n as f64;
        for i in 0..n {
            self.matrix[(i, i)] += s;
        }
        self.shift += s;
        Ok(true)
    }

    /// Expands onto `dim` positions; rows/columns not listed stay zero.
    pub fn expand(&self, positions: &[usize], dim: usize) -> Mat<f64> {
        let mut out = Mat::zeros(dim, dim);
        for (a, &i) in positions.iter().enumerate() {
            for (b, &j) in positions.iter().enumerate() {
                out[(i, j)] = self.matrix[(a, b)];
            }
        }
        out
    }
}

/// `S = K_bb − K_ba K_aa⁻¹ K_ab`. Entries coupling to dofs in neither list are ignored.
pub fn schur_complement(
    n: usize,
    k: &Triplets,
    interface: &[usize],
    interior: &[usize],
    source: SchurSource,
    generation: u64,
) -> Result<SchurOperator> {
    let mut role: Vec<Option<(bool, usize)>> = vec![None; n];
    for (i, &d) in interface.iter().enumerate() {
        role[d] = Some((true, i));
    }
    for (i, &d) in interior.iter().enumerate() {
        if role[d].is_some() {
            return Err(Error::Singular(format!("dof {d} is both interface and interior")));
        }
        role[d] = Some((false, i));
    }
    let (nb, na) = (interface.len(), interior.len());
    let mut s = Mat::zeros(nb, nb);
    let mut kab = Mat::zeros(na, nb);
    let mut kaa = Vec::new();
    for &(i, j, v) in k {
        match (role[i], role[j]) {
            (Some((true, a)), Some((true, b))) => s[(a, b)] += v,
            (Some((false, a)), Some((true, b))) => kab[(a, b)] += v,
            (Some((false, a)), Some((false, b))) => kaa.push((a, b, v)),
            _ => {}
        }
    }
    if na > 0 && nb > 0 {
        let f = SparseFactor::spd(na, &kaa)
            .map_err(|e| Error::Singular(format!("interior block of {source:?} Schur complement: {e}; add constraints or regularize")))?;
        let x = f.solve_many(&kab)?;
        s -= kab.transpose() * &x;
    }
    Ok(SchurOperator {
        matrix: s,
        source,
        generation,
        shift: 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobinMode {
    Robin,
    #[default]
    RobinIdentity,
    DirichletNeumann,
}

/// Augmented stiffnesses; vector-valued operators over the interface carriers.
#[derive(Clone, Debug)]
pub struct RobinParams {
    pub mode: RobinMode,
    /// 2m_G × 2m_G
    pub k_ia_l: Mat<f64>,
    /// 2m_G × 2m_L
    pub k_ia_g: Mat<f64>,
    /// `R_G = K_IA_G T_L⁻¹ L_L`, 2m_G × 2m_G
    pub r_g: Mat<f64>,
}

/// `ll` is the vector mortar matrix (2m_L × 2m_G) and `tl` the local trace mass.
pub fn build_robin_params(s_c: &Mat<f64>, s_l: Option<&Mat<f64>>, ll: &Mat<f64>, tl: &Mat<f64>, mode: RobinMode) -> Result<RobinParams> {
    let (ml, mg) = (ll.nrows(), ll.ncols());
    if mode == RobinMode::DirichletNeumann {
        return Ok(RobinParams {
            mode,
            k_ia_l: Mat::zeros(mg, mg),
            k_ia_g: Mat::zeros(mg, ml),
            r_g: Mat::zeros(mg, mg),
        });
    }
    let tl_inv_ll = dense_solve(tl, ll).map_err(|_| Error::Singular("local trace mass T_L is not invertible".into()))?;
    // L_Lᵀ T_L⁻ᵀ S_L = (S_Lᵀ T_L⁻¹ L_L)ᵀ
    let k_ia_g = match (mode, s_l) {
        (RobinMode::Robin, Some(sl)) => (sl.transpose() * &tl_inv_ll).transpose().to_owned(),
        (RobinMode::Robin, None) => return Err(Error::Config("Robin mode needs the local Schur complement".into())),
        _ => tl_inv_ll.transpose().to_owned(),
    };
    let r_g = &k_ia_g * &tl_inv_ll;
    Ok(RobinParams {
        mode,
        k_ia_l: s_c.clone(),
        k_ia_g,
        r_g,
    })
}

/// `Λ_L = K_IA_L·(J_G u_G) − L_G λ_C`.
pub fn lambda_rhs_l(k_ia_l: &Mat<f64>, ug_trace: &[f64], lg: &Mat<f64>, lambda_c: &[f64]) -> Vec<f64> {
    let a = mat_vec(k_ia_l, ug_trace);
    let b = mat_vec(lg, lambda_c);
    a.iter().zip(&b).map(|(x, y)| x - y).collect()
}

/// `Λ_G = K_IA_G·(J_L u_L) − L_Lᵀ λ_L`.
pub fn lambda_rhs_g(k_ia_g: &Mat<f64>, ul_trace: &[f64], ll: &Mat<f64>, lambda_l: &[f64]) -> Vec<f64> {
    let a = mat_vec(k_ia_g, ul_trace);
    let b = mat_t_vec(ll, lambda_l);
    a.iter().zip(&b).map(|(x, y)| x - y).collect()
}

/// Adds `−S_F` on the interface dofs of the global stiffness; `dofs[i]` is the
/// global dof of row i of `s_f`.
pub fn fictitious_condensation(k: &mut Triplets, s_f: &SchurOperator, dofs: &[usize]) {
    for (a, &i) in dofs.iter().enumerate() {
        for (b, &j) in dofs.iter().enumerate() {
            let v = s_f.matrix[(a, b)];
            if v != 0.0 {
                k.push((i, j, -v));
            }
        }
    }
}

/// Dense solve of `A x = b` with some entries of x prescribed.
pub fn solve_with_fixed(a: &Mat<f64>, b: &[f64], fixed: &[(usize, f64)]) -> Result<Vec<f64>> {
    let n = a.nrows();
    let mut x = vec![0.0; n];
    let fixed_map: HashMap<usize, f64> = fixed.iter().copied().collect();
    let free: Vec<usize> = (0..n).filter(|i| !fixed_map.contains_key(i)).collect();
    for (&i, &v) in &fixed_map {
        x[i] = v;
    }
    if free.is_empty() {
        return Ok(x);
    }
    let af = Mat::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
    let bf = Mat::from_fn(free.len(), 1, |i, _| {
        b[free[i]] - fixed_map.iter().map(|(&j, &v)| a[(free[i], j)] * v).sum::<f64>()
    });
    let sol = dense_solve(&af, &bf)?;
    for (k, &i) in free.iter().enumerate() {
        x[i] = sol[(k, 0)];
    }
    Ok(x)
}

/// Little-endian dump: u64 rows, u64 cols, then row-major f64 entries.
pub fn write_operator(path: &Path, m: &Mat<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * m.nrows() * m.ncols());
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_operator(path: &Path) -> Result<Mat<f64>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let word = |k: usize| -> [u8; 8] { buf[8 * k..8 * k + 8].try_into().unwrap() };
    if buf.len() < 16 {
        return Err(Error::Config("operator dump too short".into()));
    }
    let r = u64::from_le_bytes(word(0)) as usize;
    let c = u64::from_le_bytes(word(1)) as usize;
    if buf.len() != 16 + 8 * r * c {
        return Err(Error::Config(format!("operator dump size mismatch for {r}x{c}")));
    }
    Ok(Mat::from_fn(r, c, |i, j| f64::from_le_bytes(word(2 + i * c + j))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn dense_schur(k: &Mat<f64>, b: &[usize], a: &[usize]) -> Mat<f64> {
        let kbb = Mat::from_fn(b.len(), b.len(), |i, j| k[(b[i], b[j])]);
        let kab = Mat::from_fn(a.len(), b.len(), |i, j| k[(a[i], b[j])]);
        let kaa = Mat::from_fn(a.len(), a.len(), |i, j| k[(a[i], a[j])]);
        let x = dense_solve(&kaa, &kab).unwrap();
        kbb - kab.transpose() * x
    }

    fn to_triplets(k: &Mat<f64>) -> Triplets {
        let mut t = Vec::new();
        for j in 0..k.ncols() {
            for i in 0..k.nrows() {
                if k[(i, j)] != 0.0 {
                    t.push((i, j, k[(i, j)]));
                }
            }
        }
        t
    }

    #[test]
    fn two_spring_chain() {
        // 0 –k1– 1 –k2– 2, node 2 clamped: springs in series seen from node 0
        let (k1, k2) = (3.0, 5.0);
        let t = vec![(0, 0, k1), (0, 1, -k1), (1, 0, -k1), (1, 1, k1 + k2), (1, 2, -k2), (2, 1, -k2), (2, 2, k2)];
        let s = schur_complement(3, &t, &[0], &[1], SchurSource::Complementary, 0).unwrap();
        assert!((s.matrix[(0, 0)] - k1 * k2 / (k1 + k2)).abs() < 1e-14);
    }

    #[test]
    fn all_interface_is_identity_map() {
        let k = Mat::from_fn(3, 3, |i, j| if i == j { 4.0 } else { -1.0 });
        let s = schur_complement(3, &to_triplets(&k), &[0, 1, 2], &[], SchurSource::Local, 7).unwrap();
        assert_eq!(max_abs(&(&s.matrix - &k)), 0.0);
        assert_eq!(s.generation, 7);
    }

    #[test]
    fn floating_operator_gets_shift() {
        // free-free spring: S has the translation kernel
        let t = vec![(0, 0, 2.0), (0, 1, -2.0), (1, 0, -2.0), (1, 1, 2.0)];
        let mut s = schur_complement(2, &t, &[0, 1], &[], SchurSource::Local, 0).unwrap();
        assert!(s.regularize().unwrap());
        assert!((s.shift - 2e-8).abs() < 1e-20);
        let mut spd = schur_complement(2, &vec![(0, 0, 1.0), (1, 1, 1.0)], &[0, 1], &[], SchurSource::Local, 0).unwrap();
        assert!(!spd.regularize().unwrap());
    }

    #[test]
    fn robin_identity_reduces_to_trace_inverse() {
        let ll = Mat::from_fn(4, 4, |i, j| if i == j { 2.0 } else if i.abs_diff(j) == 1 { 0.5 } else { 0.0 });
        let s_c = Mat::<f64>::identity(4, 4);
        let p = build_robin_params(&s_c, None, &ll, &ll, RobinMode::RobinIdentity).unwrap();
        // matching meshes: L_L = T_L so K_IA_G = L_Lᵀ T_L⁻ᵀ = I
        assert!(max_abs(&(&p.k_ia_g - Mat::<f64>::identity(4, 4))) < 1e-14);
        assert!(max_abs(&(&p.k_ia_l - &s_c)) == 0.0);
    }

    #[test]
    fn singular_trace_mass_is_an_error() {
        let z = Mat::<f64>::zeros(2, 2);
        assert!(build_robin_params(&z, None, &z, &z, RobinMode::RobinIdentity).is_err());
    }

    #[test]
    fn lambda_rhs_zero_and_translation() {
        let k = Mat::from_fn(4, 4, |i, j| (i + j) as f64);
        let lg = Mat::<f64>::identity(4, 4);
        assert!(lambda_rhs_l(&k, &[0.0; 4], &lg, &[0.0; 4]).iter().all(|&v| v == 0.0));
        let t = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(lambda_rhs_l(&k, &t, &lg, &[0.0; 4]), mat_vec(&k, &t));
        let g = lambda_rhs_g(&k, &t, &lg, &[0.5; 4]);
        let gm = lambda_rhs_g(&k, &t.map(|v| -v), &lg, &[-0.5; 4]);
        assert!(g.iter().zip(&gm).all(|(a, b)| *a == -*b));
    }

    #[test]
    fn fixed_solve_matches_elimination() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { 3.0 } else { 1.0 });
        let x = solve_with_fixed(&a, &[1.0, 2.0, 3.0], &[(2, 0.5)]).unwrap();
        assert_eq!(x[2], 0.5);
        let r0 = 3.0 * x[0] + x[1] + 0.5 - 1.0;
        let r1 = x[0] + 3.0 * x[1] + 0.5 - 2.0;
        assert!(r0.abs() < 1e-14 && r1.abs() < 1e-14);
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64 + 0.25);
        let p = dir.path().join("s.bin");
        write_operator(&p, &m).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 48);
        assert_eq!(&bytes[0..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &0.25f64.to_le_bytes());
        assert_eq!(read_operator(&p).unwrap(), m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn matches_dense_oracle(seed in any::<u64>(), n in 4usize..30) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let k = &b * b.transpose() + Mat::<f64>::identity(n, n) * (n as f64);
            let nb = 1 + n / 3;
            let iface: Vec<usize> = (0..nb).map(|i| (i * 7) % n).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            let interior: Vec<usize> = (0..n).filter(|i| !iface.contains(i)).collect();
            let s = schur_complement(n, &to_triplets(&k), &iface, &interior, SchurSource::Complementary, 0).unwrap();
            let oracle = dense_schur(&k, &iface, &interior);
            let err = max_abs(&(&s.matrix - &oracle)) / max_abs(&oracle);
            prop_assert!(err < 1e-10, "{err}");
            prop_assert!(s.asymmetry() < 1e-10);
        }
    }
}
