use adiabound::linalg::{self, random, CMat, C64};
use adiabound::operator_core::{
    avron_elgart_check, block_norms, projector_derivative, split, twiddle, twiddle_residual, verify_ck, BasisTag,
    CkList, HermitianOperator, SpectralSplit,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random Hermitian H with a guaranteed gap above its lowest d levels.
fn gapped(dim: usize, d: usize, rng: &mut ChaCha8Rng) -> SpectralSplit {
    let u = random::unitary(dim, rng);
    let mut e: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    e.sort_by(f64::total_cmp);
    // lowest d in [−1, 1], the rest in [1.5, 3.5]
    for v in e.iter_mut().skip(d) {
        *v += 2.5;
    }
    let h = linalg::from_basis(&linalg::diag_real(&e), &u);
    let h = (&h + h.adjoint()).scale(0.5);
    split(&HermitianOperator::new(h, BasisTag::Abstract).unwrap(), d).unwrap()
}

fn case() -> impl Strategy<Value = (usize, usize, u64)> {
    prop_oneof![Just(4usize), Just(8), Just(16)].prop_flat_map(|n| (Just(n), 1..n / 2 + 1, any::<u64>()))
}

/// (1/2πi)∮ (H − z)⁻¹ X (H − z)⁻¹ dz on the circle |z| = 1.25, which
/// encloses exactly the spectrum [−1, 1] of the retained block; the
/// trapezoid rule converges geometrically on a circle.
fn resolvent_contour(h: &CMat, x: &CMat) -> CMat {
    let n = h.nrows();
    let m = 600;
    let mut acc = CMat::zeros(n, n);
    for k in 0..m {
        let t = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
        let z = C64::from_polar(1.25, t);
        let r = (h - CMat::identity(n, n) * z).try_inverse().unwrap();
        // dz = i z dt, so dz/(2πi) = z dt/2π
        acc += linalg::mul(&r, &linalg::mul(x, &r)) * (z / m as f64);
    }
    acc
}

fn comm(a: &CMat, b: &CMat) -> CMat {
    linalg::mul(a, b) - linalg::mul(b, a)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn twiddle_defining_relation((n, d, seed) in case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = gapped(n, d, &mut rng);
        let x = random::complex(n, n, &mut rng);
        let xt = twiddle(&x, &sp).unwrap();
        prop_assert!(twiddle_residual(&x, &xt, &sp) < 1e-10 * linalg::op_norm(&x));
    }

    #[test]
    fn twiddle_is_block_off_diagonal((n, d, seed) in case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = gapped(n, d, &mut rng);
        let x = random::complex(n, n, &mut rng);
        let xt = twiddle(&x, &sp).unwrap();
        let pp = linalg::mul(&sp.p, &linalg::mul(&xt, &sp.p));
        let qq = linalg::mul(&sp.q, &linalg::mul(&xt, &sp.q));
        let scale = linalg::op_norm(&xt).max(1.0);
        prop_assert!(linalg::op_norm(&pp) < 1e-12 * scale && linalg::op_norm(&qq) < 1e-12 * scale);
    }

    /// The resolvent integral equals −[(X†)~]†; the solution of the
    /// defining relation is its negative, so X̃ = +[(X†)~]†.
    #[test]
    fn twiddle_adjoint_relation((n, d, seed) in case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = gapped(n, d, &mut rng);
        let x = random::complex(n, n, &mut rng);
        let xt = twiddle(&x, &sp).unwrap();
        let dagger = twiddle(&x.adjoint(), &sp).unwrap().adjoint();
        let scale = linalg::op_norm(&x);
        prop_assert!(linalg::max_abs(&(&xt - &dagger)) < 1e-12 * scale);
        let contour = resolvent_contour(&sp.h, &x);
        prop_assert!(linalg::max_abs(&(contour + &dagger)) < 1e-10 * scale);
    }

    #[test]
    fn twiddle_bounded_by_tau((n, d, seed) in case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = gapped(n, d, &mut rng);
        for _ in 0..10 {
            let x = random::complex(n, n, &mut rng);
            let xt = twiddle(&x, &sp).unwrap();
            prop_assert!(linalg::op_norm(&xt) <= sp.tau() * linalg::op_norm(&x) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn commuting_pull_through((n, d, seed) in case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = gapped(n, d, &mut rng);
        let x = random::complex(n, n, &mut rng);
        // Y a function of H commutes with it
        let f: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let y = linalg::from_basis(&CMat::from_diagonal(&nalgebra::DVector::from_vec(f)), &sp.eigenvectors);
        let xy = linalg::mul(&x, &y);
        let lhs = twiddle(&xy, &sp).unwrap();
        let rhs = linalg::mul(&twiddle(&x, &sp).unwrap(), &y);
        prop_assert!(linalg::op_norm(&(lhs - rhs)) < 1e-10 * linalg::op_norm(&xy).max(1e-300));
    }

    #[test]
    fn projector_derivative_is_off_diagonal((n, d, seed) in case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = gapped(n, d, &mut rng);
        let hp = HermitianOperator::new(random::hermitian(n, &mut rng), BasisTag::Abstract).unwrap();
        let pp = projector_derivative(&hp, &sp).unwrap();
        let scale = linalg::op_norm(&pp);
        prop_assert!(linalg::op_norm(&linalg::mul(&sp.p, &linalg::mul(&pp, &sp.p))) < 1e-10 * scale);
        prop_assert!(linalg::op_norm(&linalg::mul(&sp.q, &linalg::mul(&pp, &sp.q))) < 1e-10 * scale);
        // P′ = [[P′, P], P] generates the projector flow
        let c = comm(&comm(&pp, &sp.p), &sp.p);
        prop_assert!(linalg::op_norm(&(c - &pp)) < 1e-10 * scale);
    }

    #[test]
    fn off_diagonal_block_below_square((n, d, seed) in case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = gapped(n, d, &mut rng);
        let x = random::hermitian(n, &mut rng);
        let bn = block_norms(&x, &sp, &[]).unwrap();
        let x2 = linalg::mul(&x, &x);
        let px2p = linalg::op_norm(&linalg::mul(&sp.p, &linalg::mul(&x2, &sp.p)));
        prop_assert!(bn.pq * bn.pq <= px2p * (1.0 + 1e-12));
    }

    #[test]
    fn avron_elgart_holds_when_certified(seed in any::<u64>(), n in 3usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = HermitianOperator::new(random::hermitian(n, &mut rng), BasisTag::Abstract).unwrap();
        let hp = HermitianOperator::new(random::hermitian(n, &mut rng), BasisTag::Abstract).unwrap();
        // H′² ≤ c₀ + c₁H² with c₀ = ‖H′‖², c₁ drawn at random
        let c0 = linalg::op_norm(hp.entries()).powi(2);
        let c1 = rng.random_range(0.0..2.0);
        let ck = CkList::new(vec![c0, c1]).unwrap();
        prop_assert!(verify_ck(&h, &hp, &ck, None).unwrap().passed);
        prop_assert!(avron_elgart_check(&h, &hp, c0, c1).unwrap().holds());
    }
}

#[test]
fn power_iteration_norm_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random::complex(8, 8, &mut rng);
    let ata = linalg::adj_mul(&a, &a);
    let mut v = nalgebra::DVector::from_element(8, C64::new(1.0, 0.0));
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let w = &ata * &v;
        lambda = w.norm() / v.norm();
        v = w.unscale(w.norm());
    }
    assert!((linalg::op_norm(&a) - lambda.sqrt()).abs() < 1e-9 * lambda.sqrt());
}

#[test]
fn projector_derivative_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h0 = gapped(6, 2, &mut rng).h;
    let h1 = random::hermitian(6, &mut rng).scale(0.3);
    let at = |s: f64| split(&HermitianOperator::new(&h0 + h1.scale(s), BasisTag::Abstract).unwrap(), 2).unwrap();
    let exact = projector_derivative(&HermitianOperator::new(h1.clone(), BasisTag::Abstract).unwrap(), &at(0.2)).unwrap();
    let err = |h: f64| linalg::op_norm(&((at(0.2 + h).p - at(0.2 - h).p).scale(0.5 / h) - &exact));
    let (e1, e2) = (err(1e-3), err(5e-4));
    assert!(e1 < 1e-5, "{e1}");
    assert!((e1 / e2 - 4.0).abs() < 0.5, "ratio {}", e1 / e2);
}
