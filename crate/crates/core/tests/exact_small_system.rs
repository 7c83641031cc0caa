//! For a product state (coherent field times single-atom pure states) the
//! second-order closure is exact, so every drift and diffusion coefficient
//! must equal the exact quantum expectation-value derivative. Checked with a
//! truncated Fock space and three explicit atoms (two in ensemble 0, one in
//! ensemble 1).

use num_complex::Complex64 as C64;
use superrad::engine::{diffusion, drift, StateDerivative};
use superrad::model::{DriveStage, EnsembleSpec, Envelope, HalfInt, PhysicalParams};
use superrad::CumulantState;

const FOCK: usize = 32;
const ATOMS: usize = 3;
const DIM: usize = FOCK << ATOMS;

type Mat = Vec<C64>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn zeros() -> Mat {
    vec![c(0.0, 0.0); DIM * DIM]
}

fn mul(x: &Mat, y: &Mat) -> Mat {
    let mut out = zeros();
    for i in 0..DIM {
        for k in 0..DIM {
            let xik = x[i * DIM + k];
            if xik == c(0.0, 0.0) {
                continue;
            }
            for j in 0..DIM {
                out[i * DIM + j] += xik * y[k * DIM + j];
            }
        }
    }
    out
}

fn dagger(x: &Mat) -> Mat {
    let mut out = zeros();
    for i in 0..DIM {
        for j in 0..DIM {
            out[j * DIM + i] = x[i * DIM + j].conj();
        }
    }
    out
}

fn add(x: &Mat, y: &Mat, s: C64) -> Mat {
    x.iter().zip(y).map(|(a, b)| a + s * b).collect()
}

/// `Tr(x y)`
fn trace_prod(x: &Mat, y: &Mat) -> C64 {
    let mut t = c(0.0, 0.0);
    for i in 0..DIM {
        for k in 0..DIM {
            t += x[i * DIM + k] * y[k * DIM + i];
        }
    }
    t
}

/// Index layout: field (slowest) then atoms 0..3, atom basis |e> = 0, |g> = 1.
fn annihilation() -> Mat {
    let mut m = zeros();
    for n in 1..FOCK {
        for at in 0..(1 << ATOMS) {
            let row = ((n - 1) << ATOMS) | at;
            let col = (n << ATOMS) | at;
            m[row * DIM + col] = c((n as f64).sqrt(), 0.0);
        }
    }
    m
}

fn lowering(atom: usize) -> Mat {
    let bit = 1 << (ATOMS - 1 - atom);
    let mut m = zeros();
    for idx in 0..DIM {
        if idx & bit == 0 {
            // |e> -> |g>
            m[(idx | bit) * DIM + idx] = c(1.0, 0.0);
        }
    }
    m
}

fn pauli_z(atom: usize) -> Mat {
    let bit = 1 << (ATOMS - 1 - atom);
    let mut m = zeros();
    for idx in 0..DIM {
        m[idx * DIM + idx] = c(if idx & bit == 0 { 1.0 } else { -1.0 }, 0.0);
    }
    m
}

fn product_state(alpha: C64, atoms: [(f64, f64); ATOMS]) -> Vec<C64> {
    let mut field = vec![c(0.0, 0.0); FOCK];
    let mut fact = 1.0;
    for (n, f) in field.iter_mut().enumerate() {
        if n > 0 {
            fact *= n as f64;
        }
        *f = (-0.5 * alpha.norm_sqr()).exp() * alpha.powu(n as u32) / fact.sqrt();
    }
    let mut psi = vec![c(0.0, 0.0); DIM];
    for (idx, amp) in psi.iter_mut().enumerate() {
        let mut v = field[idx >> ATOMS];
        for (k, &(theta, phi)) in atoms.iter().enumerate() {
            let bit = 1 << (ATOMS - 1 - k);
            v *= if idx & bit == 0 {
                c((0.5 * theta).cos(), 0.0)
            } else {
                C64::from_polar((0.5 * theta).sin(), phi)
            };
        }
        *amp = v;
    }
    psi
}

struct Ops {
    a: Mat,
    ad: Mat,
    sm: Vec<Mat>,
    sp: Vec<Mat>,
    sz: Vec<Mat>,
}

impl Ops {
    fn new() -> Self {
        let a = annihilation();
        let ad = dagger(&a);
        let sm: Vec<Mat> = (0..ATOMS).map(lowering).collect();
        let sp = sm.iter().map(dagger).collect();
        let sz = (0..ATOMS).map(pauli_z).collect();
        Ops { a, ad, sm, sp, sz }
    }
}

/// Representative atoms: ensemble 0 = atoms {0, 1}, ensemble 1 = atom {2}.
const REP: [usize; 2] = [0, 2];
/// A second, distinct atom for same-ensemble pairs (only ensemble 0 has one).
fn partner(j: usize, i: usize) -> (usize, usize) {
    if j == i {
        (1, REP[i])
    } else {
        (REP[j], REP[i])
    }
}

/// Fills every moment of the state from `expect`, a map operator -> <op>.
fn moments(ops: &Ops, expect: &dyn Fn(&Mat) -> C64) -> CumulantState {
    let mut st = CumulantState::zeros(2);
    st.set_a(expect(&ops.a));
    st.set_n(expect(&mul(&ops.ad, &ops.a)).re);
    st.set_aa(expect(&mul(&ops.a, &ops.a)));
    for (i, &r) in REP.iter().enumerate() {
        st.set_s(i, expect(&ops.sm[r]));
        st.set_z(i, expect(&ops.sz[r]).re);
        st.set_as_p(i, expect(&mul(&ops.a, &ops.sp[r])));
        st.set_as_m(i, expect(&mul(&ops.a, &ops.sm[r])));
        st.set_as_z(i, expect(&mul(&ops.a, &ops.sz[r])));
    }
    for i in 0..2 {
        for j in 0..2 {
            let (aj, ai) = partner(j, i);
            st.set_sz(j, i, expect(&mul(&ops.sm[aj], &ops.sz[ai])));
            if j <= i {
                st.set_sp(j, i, expect(&mul(&ops.sm[aj], &ops.sp[ai])));
                st.set_sm(j, i, expect(&mul(&ops.sm[aj], &ops.sm[ai])));
                st.set_zz(j, i, expect(&mul(&ops.sz[aj], &ops.sz[ai])).re);
            }
        }
    }
    st
}

fn lindblad_dissipator(l: &Mat, rho: &Mat) -> Mat {
    let ld = dagger(l);
    let ldl = mul(&ld, l);
    let mut out = mul(&mul(l, rho), &ld);
    out = add(&out, &mul(&ldl, rho), c(-0.5, 0.0));
    add(&out, &mul(rho, &ldl), c(-0.5, 0.0))
}

fn compare(label: &str, got: &CumulantState, want: &CumulantState) {
    let scale = want
        .as_slice()
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut checks: Vec<(String, C64, C64)> = vec![
        ("a".into(), got.a(), want.a()),
        ("n".into(), c(got.n(), 0.0), c(want.n(), 0.0)),
        ("aa".into(), got.aa(), want.aa()),
    ];
    for i in 0..2 {
        checks.push((format!("s{i}"), got.s(i), want.s(i)));
        checks.push((format!("z{i}"), c(got.z(i), 0.0), c(want.z(i), 0.0)));
        checks.push((format!("as_p{i}"), got.as_p(i), want.as_p(i)));
        checks.push((format!("as_m{i}"), got.as_m(i), want.as_m(i)));
        checks.push((format!("as_z{i}"), got.as_z(i), want.as_z(i)));
        for j in 0..2 {
            // Ensemble 1 holds a single atom: no same-ensemble pair exists.
            if i == 1 && j == 1 {
                continue;
            }
            checks.push((format!("sp{j}{i}"), got.sp(j, i), want.sp(j, i)));
            checks.push((format!("sm{j}{i}"), got.sm(j, i), want.sm(j, i)));
            checks.push((format!("sz{j}{i}"), got.sz(j, i), want.sz(j, i)));
            checks.push((format!("zz{j}{i}"), c(got.zz(j, i), 0.0), c(want.zz(j, i), 0.0)));
        }
    }
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, g, w)| (g - w).norm() > 1e-9 * scale)
        .map(|(name, g, w)| format!("{name}: got {g:.6e}, exact {w:.6e}"))
        .collect();
    assert!(bad.is_empty(), "{label} mismatches (scale {scale:e}):\n{}", bad.join("\n"));
}

fn check(ops: &Ops, rho: &Mat) {
    let tau = std::f64::consts::TAU;
    let params = PhysicalParams {
        kappa1: tau * 3.0e3,
        kappa2: tau * 5.0e3,
        g0: tau * 1.0,
        gamma0: tau * 40.0,
        eta: 0.3,
        delta_het: tau * 1.0e3,
        omega_a_abs: 1.0,
        detuning_cavity: tau * 700.0,
        detuning_atom: 0.0,
    };
    let ens = [
        EnsembleSpec {
            m_f: HalfInt::from_twice(9),
            n_atoms: 2.0,
            detuning: tau * 250.0,
            coupling: tau * 900.0,
            gamma: tau * 40.0,
        },
        EnsembleSpec {
            m_f: HalfInt::from_twice(-7),
            n_atoms: 1.0,
            detuning: -tau * 600.0,
            coupling: -tau * 650.0,
            gamma: tau * 15.0,
        },
    ];
    let drive = DriveStage {
        duration: 1.0,
        omega_m: 9.0,
        detuning_drive: tau * 120.0,
        phase: 0.7,
        envelope: Envelope::Square,
    };
    let t = 3.1e-4;

    // H = dc a^+a + sum w_k s+_k s-_k + sum g_k (a^+ s-_k + a s+_k)
    //     + sqrt(k1) (Omega^* e^{-i wd t} a^+ + h.c.)
    let atom_ens = [0usize, 0, 1];
    let mut h = mul(&ops.ad, &ops.a);
    h.iter_mut().for_each(|v| *v *= params.detuning_cavity);
    let src = params.kappa1.sqrt() * C64::from_polar(drive.omega_m, drive.phase).conj()
        * C64::from_polar(1.0, -drive.detuning_drive * t);
    h = add(&h, &ops.ad, src);
    h = add(&h, &ops.a, src.conj());
    for k in 0..ATOMS {
        let e = &ens[atom_ens[k]];
        h = add(&h, &mul(&ops.sp[k], &ops.sm[k]), c(e.detuning, 0.0));
        h = add(&h, &mul(&ops.ad, &ops.sm[k]), c(e.coupling, 0.0));
        h = add(&h, &mul(&ops.a, &ops.sp[k]), c(e.coupling, 0.0));
    }
    let mut lrho = add(&mul(&h, rho), &mul(rho, &h), c(-1.0, 0.0));
    lrho.iter_mut().for_each(|v| *v *= c(0.0, -1.0));
    lrho = add(&lrho, &lindblad_dissipator(&ops.a, rho), c(params.kappa(), 0.0));
    for k in 0..ATOMS {
        let g = ens[atom_ens[k]].gamma;
        lrho = add(&lrho, &lindblad_dissipator(&ops.sm[k], rho), c(g, 0.0));
    }

    let state = moments(&ops, &|x| trace_prod(x, rho));
    let exact_drift = moments(&ops, &|x| trace_prod(x, &lrho));
    let mut got = StateDerivative::zeros(2);
    drift(&state, t, &params, &ens, Some(&drive), &mut got).unwrap();
    compare("drift", &got, &exact_drift);

    // Backaction: d<X> = sqrt(eta k2) <X c + c^+ X> - <X><c + c^+>, c = e^{-i D t} a.
    let u = C64::from_polar(1.0, -params.delta_het * t);
    let mut cmat = ops.a.clone();
    cmat.iter_mut().for_each(|v| *v *= u);
    let cd = dagger(&cmat);
    let mean_x = trace_prod(&add(&cmat, &cd, c(1.0, 0.0)), rho);
    let hrho = add(
        &add(&mul(&cmat, rho), &mul(rho, &cd), c(1.0, 0.0)),
        rho,
        -mean_x,
    );
    let mut exact_diff = moments(&ops, &|x| trace_prod(x, &hrho));
    let sq = params.measurement_rate_sqrt();
    exact_diff.as_mut_slice().iter_mut().for_each(|v| *v *= sq);
    let mut got = StateDerivative::zeros(2);
    diffusion(&state, t, &params, &mut got);
    compare("diffusion", &got, &exact_diff);
}

fn pure(psi: &[C64]) -> Mat {
    let mut rho = zeros();
    for i in 0..DIM {
        for j in 0..DIM {
            rho[i * DIM + j] = psi[i] * psi[j].conj();
        }
    }
    rho
}

#[test]
fn closed_equations_are_exact_on_product_states() {
    let ops = Ops::new();
    let (ta, pa) = (1.1, 0.4);
    let psi = product_state(c(0.8, -0.5), [(ta, pa), (ta, pa), (2.3, -1.3)]);
    check(&ops, &pure(&psi));
}

// Field-only helpers on the FOCK x FOCK space.
fn fmul(x: &[C64], y: &[C64]) -> Vec<C64> {
    let mut out = vec![c(0.0, 0.0); FOCK * FOCK];
    for i in 0..FOCK {
        for k in 0..FOCK {
            for j in 0..FOCK {
                out[i * FOCK + j] += x[i * FOCK + k] * y[k * FOCK + j];
            }
        }
    }
    out
}

fn fdagger(x: &[C64]) -> Vec<C64> {
    let mut out = vec![c(0.0, 0.0); FOCK * FOCK];
    for i in 0..FOCK {
        for j in 0..FOCK {
            out[j * FOCK + i] = x[i * FOCK + j].conj();
        }
    }
    out
}

/// Matrix exponential by scaling and squaring of a Taylor series.
fn fexpm(x: &[C64]) -> Vec<C64> {
    let norm: f64 = x.iter().map(|v| v.norm()).sum();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let xs: Vec<C64> = x.iter().map(|v| v * scale).collect();
    let mut id = vec![c(0.0, 0.0); FOCK * FOCK];
    for i in 0..FOCK {
        id[i * FOCK + i] = c(1.0, 0.0);
    }
    let mut out = id.clone();
    let mut term = id;
    for k in 1..30 {
        term = fmul(&term, &xs);
        term.iter_mut().for_each(|v| *v /= k as f64);
        out.iter_mut().zip(&term).for_each(|(o, t)| *o += t);
    }
    for _ in 0..squarings {
        out = fmul(&out, &out);
    }
    out
}

fn kron_field_atoms(rho_f: &[C64], phi: &[C64]) -> Mat {
    let na = 1 << ATOMS;
    let mut rho = zeros();
    for f1 in 0..FOCK {
        for f2 in 0..FOCK {
            let rf = rho_f[f1 * FOCK + f2];
            for a1 in 0..na {
                for a2 in 0..na {
                    rho[((f1 << ATOMS) | a1) * DIM + ((f2 << ATOMS) | a2)] = rf * phi[a1] * phi[a2].conj();
                }
            }
        }
    }
    rho
}

fn product_atoms(atoms: [(f64, f64); ATOMS]) -> Vec<C64> {
    let full = product_state(c(0.0, 0.0), atoms);
    full[..1 << ATOMS].to_vec()
}

#[test]
fn closed_equations_are_exact_on_gaussian_field_states() {
    // Displaced squeezed thermal field: third-order normal-ordered field
    // cumulants vanish while n - |a|^2 and aa - a^2 do not.
    let ops = Ops::new();
    let mut af = vec![c(0.0, 0.0); FOCK * FOCK];
    for n in 1..FOCK {
        af[(n - 1) * FOCK + n] = c((n as f64).sqrt(), 0.0);
    }
    let adf = fdagger(&af);
    let nbar: f64 = 0.15;
    let ratio = nbar / (1.0 + nbar);
    let mut rho_f = vec![c(0.0, 0.0); FOCK * FOCK];
    for n in 0..FOCK {
        rho_f[n * FOCK + n] = c((1.0 - ratio) * ratio.powi(n as i32), 0.0);
    }
    let xi = C64::from_polar(0.25, 0.9);
    let a2 = fmul(&af, &af);
    let ad2 = fmul(&adf, &adf);
    let gen_s: Vec<C64> = a2
        .iter()
        .zip(&ad2)
        .map(|(l, r)| 0.5 * (xi.conj() * l - xi * r))
        .collect();
    let alpha = c(0.7, 0.45);
    let gen_d: Vec<C64> = adf.iter().zip(&af).map(|(r, l)| alpha * r - alpha.conj() * l).collect();
    let u = fmul(&fexpm(&gen_d), &fexpm(&gen_s));
    let rho_f = fmul(&fmul(&u, &rho_f), &fdagger(&u));
    let (ta, pa) = (0.8, -0.3);
    let phi = product_atoms([(ta, pa), (ta, pa), (1.9, 2.2)]);
    let rho = kron_field_atoms(&rho_f, &phi);
    let mean_n = trace_prod(&mul(&ops.ad, &ops.a), &rho).re;
    let mean_a = trace_prod(&ops.a, &rho);
    assert!(mean_n - mean_a.norm_sqr() > 0.1, "state must carry field covariance");
    check(&ops, &rho);
}

#[test]
fn closed_equations_are_exact_on_correlated_atoms() {
    // Coherent field times an entangled atom state that is symmetric under
    // exchange of the two ensemble-0 atoms.
    let ops = Ops::new();
    let mut seed = 0x2545_F491_4F6C_DD1Du64;
    let mut next = || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let raw: Vec<C64> = (0..1 << ATOMS).map(|_| c(next(), next())).collect();
    let swap01 = |idx: usize| {
        let b0 = (idx >> 2) & 1;
        let b1 = (idx >> 1) & 1;
        (idx & 1) | (b0 << 1) | (b1 << 2)
    };
    let mut phi: Vec<C64> = (0..1 << ATOMS).map(|i| raw[i] + raw[swap01(i)]).collect();
    let norm = phi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    phi.iter_mut().for_each(|v| *v /= norm);
    let mut coherent = product_state(c(-0.6, 0.35), [(std::f64::consts::PI, 0.0); ATOMS]);
    // Ground-state atoms: keep the |ggg> column as the field amplitudes.
    let field: Vec<C64> = (0..FOCK).map(|n| coherent[(n << ATOMS) | 7]).collect();
    coherent.clear();
    let mut rho_f = vec![c(0.0, 0.0); FOCK * FOCK];
    for i in 0..FOCK {
        for j in 0..FOCK {
            rho_f[i * FOCK + j] = field[i] * field[j].conj();
        }
    }
    let rho = kron_field_atoms(&rho_f, &phi);
    let s0 = trace_prod(&ops.sm[0], &rho);
    let s2 = trace_prod(&ops.sm[2], &rho);
    let pair = trace_prod(&mul(&ops.sm[0], &ops.sp[2]), &rho);
    assert!((pair - s0 * s2.conj()).norm() > 1e-2, "atoms must be correlated");
    check(&ops, &rho);
}
