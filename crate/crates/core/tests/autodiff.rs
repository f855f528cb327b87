use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taagcn::tensor::{
    grad_check_objective, Dd, GradCheckOptions, Objective, Reference, Result, Scalar, Stencil, Tape, Tensor, Var,
};

const TOL: f64 = 1e-6;

fn random(shape: [usize; 2], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

fn check(obj: &impl Objective, params: Vec<(&str, Tensor<f64>)>) -> f64 {
    let opts = GradCheckOptions {
        eps: 1e-9,
        stencil: Stencil::Central,
        reference: Reference::DoubleDouble,
        ..GradCheckOptions::default()
    };
    let named: Vec<(String, Tensor<f64>)> = params.into_iter().map(|(n, t)| (n.to_string(), t)).collect();
    grad_check_objective(obj, &named, &opts).unwrap().max_rel_err()
}

struct DenseSoftmax {
    target: Tensor<f64>,
}

impl Objective for DenseSoftmax {
    fn eval<T: Scalar>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let h = t.matmul(v[0], v[1])?;
        let h = t.add_row(h, v[2])?;
        let h = t.exp(h)?;
        let p = t.softmax(h, 1)?;
        let c = t.constant(self.target.cast());
        let y = t.mul(p, c)?;
        t.sum_all(y)
    }
}

struct CosineReductions;

impl CosineReductions {
    fn stack<T: Scalar>(t: &mut Tape<T>, a: Var, sc: Var) -> Result<Var> {
        let n = t.normalize_rows(a, T::from_f64_lossy(1e-2))?;
        let c = t.matmul_nt(n, n)?;
        let c = t.mul_scalar(c, sc)?;
        let ct = t.transpose(c)?;
        let m = t.mean_axis(ct, 1)?;
        let s = t.sum_axis(c, 1)?;
        t.concat(&[m, s], 0)
    }
}

impl Objective for CosineReductions {
    fn eval<T: Scalar>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let both = Self::stack(t, v[0], v[1])?;
        let top = t.max_axis(both, 0)?;
        let tail = t.slice(both, 0, 3, 4)?;
        let tail = t.sum_all(tail)?;
        let top = t.sum_all(top)?;
        t.add(tail, top)
    }
}

struct Logistic {
    gammas: Tensor<f64>,
    mask: Tensor<f64>,
}

impl Objective for Logistic {
    fn eval<T: Scalar>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let u = t.clamp_min(v[0], T::from_f64_lossy(1e-6))?;
        let p = t.pow(u, self.gammas.cast())?;
        let p = t.add_const(p, T::one())?;
        let r = t.recip(p)?;
        let y = t.mul(r, v[1])?;
        let y = t.div(y, v[2])?;
        let y = t.apply_mask(y, self.mask.cast())?;
        let y = t.scale(y, T::from_f64_lossy(3.0))?;
        let y = t.reshape(y, vec![2, 6])?;
        let z = t.sub(y, y)?;
        let y = t.add(y, z)?;
        t.sum_all(y)
    }
}

struct ReluSquare;

impl Objective for ReluSquare {
    fn eval<T: Scalar>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let r = t.relu(v[0])?;
        let sq = t.mul(r, r)?;
        t.sum_all(sq)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_layer_with_softmax(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obj = DenseSoftmax { target: random([4, 5], 0.0, 1.0, &mut rng) };
        let err = check(&obj, vec![
            ("x", random([4, 3], -1.0, 1.0, &mut rng)),
            ("w", random([3, 5], -1.0, 1.0, &mut rng)),
            ("b", random([1, 5], -0.5, 0.5, &mut rng)),
        ]);
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn cosine_and_reductions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random([5, 4], -1.0, 1.0, &mut rng);
        let sc = random([1, 1], 0.5, 2.0, &mut rng);
        // Keep the max away from its kink.
        let mut probe = Tape::new();
        let (pa, ps) = (probe.param(a.clone()), probe.param(sc.clone()));
        let both = CosineReductions::stack(&mut probe, pa, ps).unwrap();
        let mut vals = probe.value(both).data().to_vec();
        vals.sort_by(|x, y| y.total_cmp(x));
        prop_assume!(vals[0] - vals[1] > 1e-6);
        let err = check(&CosineReductions, vec![("a", a), ("s", sc)]);
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn logistic_forms(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obj = Logistic {
            gammas: Tensor::from_fn(vec![3, 4], |i| -((i % 5 + 1) as f64)),
            mask: Tensor::from_fn(vec![3, 4], |i| (i % 3 != 0) as u8 as f64),
        };
        let err = check(&obj, vec![
            ("u", random([3, 4], 0.2, 2.0, &mut rng)),
            ("w", random([3, 4], 0.5, 1.5, &mut rng)),
            ("d", random([3, 4], 0.5, 3.0, &mut rng)),
        ]);
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn relu_away_from_the_kink(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(vec![6, 3], |_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        });
        let err = check(&ReluSquare, vec![("x", x)]);
        prop_assert!(err < TOL, "{}", err);
    }
}

fn softmax_exp_moment<T: Scalar>(tape: &mut Tape<T>, x: Tensor<T>) -> Result<(Var, Var)> {
    let v = tape.param(x);
    let p = tape.softmax(v, 1)?;
    let lp = tape.exp(p)?;
    let y = tape.mul(p, lp)?;
    Ok((v, tape.sum_all(y)?))
}

#[test]
fn double_double_tape_agrees_with_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random([3, 7], -2.0, 2.0, &mut rng);
    let mut t64 = Tape::<f64>::new();
    let (x64, l64) = softmax_exp_moment(&mut t64, x.clone()).unwrap();
    let mut tdd = Tape::<Dd>::new();
    let (xdd, ldd) = softmax_exp_moment(&mut tdd, x.cast()).unwrap();
    let a = t64.value(l64).item();
    let b = tdd.value(ldd).item().hi();
    assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
    let g64 = t64.backward(l64).unwrap().wrt(x64);
    let gdd = tdd.backward(ldd).unwrap().wrt(xdd);
    for (p, q) in g64.data().iter().zip(gdd.data()) {
        assert!((p - q.hi()).abs() < 1e-14, "{p} vs {q:?}");
    }
}
