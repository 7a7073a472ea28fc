//! Primitive ops against independent scalar-loop oracles, plus gradient
//! checks for every differentiable primitive.

use dformer_core::tensor::{grad_check, grad_check_many, Unary};
use dformer_core::{Error, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn eval1(x: &Tensor, f: impl Fn(&mut Tape, Var) -> Var) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v);
    tape.value(out).clone()
}

// ---- oracles -----------------------------------------------------------------

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at(&[i, p]) * b.at(&[p, j]);
            }
            out[i * n + j] = s;
        }
    }
    t(&[m, n], &out)
}

/// Explicitly zero-padded direct convolution.
fn naive_dwconv(x: &Tensor, k: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ks = k.shape()[1];
    let p = ks / 2;
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut padded = vec![0.0; c * hp * wp];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                padded[ch * hp * wp + (y + p) * wp + xx + p] = x.at(&[ch, y, xx]);
            }
        }
    }
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let mut s = 0.0;
                for dy in 0..ks {
                    for dx in 0..ks {
                        s += k.at(&[ch, dy, dx]) * padded[ch * hp * wp + (y + dy) * wp + xx + dx];
                    }
                }
                out[ch * h * w + y * w + xx] = s;
            }
        }
    }
    t(&[c, h, w], &out)
}

/// Φ(x) via the Maclaurin series of erf.
fn erf_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = x;
    for n in 0..60 {
        sum += term / (2 * n + 1) as f64;
        term *= -x * x / (n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

// ---- matmul ------------------------------------------------------------------

#[test]
fn matmul_hand_example() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_identity_and_random_oracle() {
    let mut r = rng(1);
    let a = Tensor::randn(&[3, 4], 1.0, &mut r);
    let b = Tensor::randn(&[4, 2], 1.0, &mut r);
    let mut tape = Tape::new();
    let (av, bv, iv) = (tape.constant(a.clone()), tape.constant(b.clone()), tape.constant(Tensor::eye(4)));
    let ai = tape.matmul(av, iv).unwrap();
    assert_eq!(tape.value(ai), &a);
    let ab = tape.matmul(av, bv).unwrap();
    assert!(tape.value(ab).max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    let bt = tape.constant(b.transpose2d().unwrap());
    let abt = tape.matmul_bt(av, bt).unwrap();
    assert!(tape.value(abt).max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

// ---- softmax -----------------------------------------------------------------

#[test]
fn softmax_examples() {
    let y = eval1(&t(&[3], &[0.0, 0.0, 0.0]), |tp, v| tp.softmax(v));
    for &p in y.data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let y = eval1(&t(&[2], &[1f64.ln(), 3f64.ln()]), |tp, v| tp.softmax(v));
    // exp(ln 1) / (1 + 3), exp(ln 3) / (1 + 3)
    assert!((y.data()[0] - 0.25).abs() < 1e-15);
    assert!((y.data()[1] - 0.75).abs() < 1e-15);
}

#[test]
fn softmax_is_stable_for_large_inputs() {
    let y = eval1(&t(&[3], &[1000.0, 1000.0, -1000.0]), |tp, v| tp.softmax(v));
    assert!(y.is_finite());
    assert!((y.data()[0] - 0.5).abs() < 1e-15);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        data in prop::collection::vec(-20.0f64..20.0, 12),
        shift in -50.0f64..50.0,
    ) {
        let x = t(&[3, 4], &data);
        let y = eval1(&x, |tp, v| tp.softmax(v));
        for row in y.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
        let shifted = Tensor::from_fn(&[3, 4], |i| data[i] + shift);
        let ys = eval1(&shifted, |tp, v| tp.softmax(v));
        prop_assert!(ys.max_abs_diff(&y) < 1e-12);
    }
}

// ---- layer norm --------------------------------------------------------------

fn ln(x: &Tensor, eps: f64) -> Tensor {
    let n = *x.shape().last().unwrap();
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let g = tape.constant(Tensor::ones(&[n]));
    let b = tape.constant(Tensor::zeros(&[n]));
    let y = tape.layer_norm(v, g, b, eps).unwrap();
    tape.value(y).clone()
}

#[test]
fn layer_norm_examples() {
    let y = ln(&t(&[1, 4], &[2.5; 4]), 1e-5);
    assert!(y.data().iter().all(|&v| v == 0.0));
    let y = ln(&t(&[1, 2], &[1.0, 3.0]), 1e-14);
    assert!((y.data()[0] + 1.0).abs() < 1e-12 && (y.data()[1] - 1.0).abs() < 1e-12);
}

#[test]
fn layer_norm_matches_scalar_oracle_with_affine() {
    let mut r = rng(2);
    let x = Tensor::randn(&[3, 7], 2.0, &mut r);
    let gamma = Tensor::randn(&[7], 1.0, &mut r);
    let beta = Tensor::randn(&[7], 1.0, &mut r);
    let eps = 1e-5;
    let mut tape = Tape::new();
    let (v, g, b) = (tape.constant(x.clone()), tape.constant(gamma.clone()), tape.constant(beta.clone()));
    let y = tape.layer_norm(v, g, b, eps).unwrap();
    let y = tape.value(y);
    for row in 0..3 {
        let vals: Vec<f64> = (0..7).map(|j| x.at(&[row, j])).collect();
        let mean = vals.iter().sum::<f64>() / 7.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
        for j in 0..7 {
            let expect = (vals[j] - mean) / (var + eps).sqrt() * gamma.data()[j] + beta.data()[j];
            assert!((y.at(&[row, j]) - expect).abs() < 1e-10);
        }
    }
}

#[test]
fn layer_norm_rejects_bad_eps_and_shapes() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(&[2, 3]));
    let g = tape.constant(Tensor::ones(&[3]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(tape.layer_norm(x, g, b, 0.0).is_err());
    let g4 = tape.constant(Tensor::ones(&[4]));
    assert!(tape.layer_norm(x, g4, b, 1e-5).is_err());
}

proptest! {
    #[test]
    fn layer_norm_standardizes_rows(data in prop::collection::vec(-10.0f64..10.0, 8)) {
        let spread = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - data.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-2);
        let y = ln(&t(&[1, 8], &data), 1e-12);
        let mean = y.data().iter().sum::<f64>() / 8.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        prop_assert!(mean.abs() < 1e-10);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }
}

// ---- depthwise conv ----------------------------------------------------------

fn conv(x: &Tensor, k: &Tensor) -> Result<Tensor, Error> {
    let mut tape = Tape::new();
    let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
    let y = tape.dwconv2d(xv, kv)?;
    Ok(tape.value(y).clone())
}

#[test]
fn dwconv_identity_kernel() {
    let mut r = rng(3);
    let x = Tensor::randn(&[2, 5, 4], 1.0, &mut r);
    let k = Tensor::from_fn(&[2, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 });
    assert_eq!(conv(&x, &k).unwrap(), x);
}

#[test]
fn dwconv_padding_counts() {
    let y = conv(&Tensor::ones(&[1, 5, 5]), &Tensor::ones(&[1, 3, 3])).unwrap();
    assert_eq!(y.at(&[0, 2, 2]), 9.0);
    assert_eq!(y.at(&[0, 0, 0]), 4.0);
    assert_eq!(y.at(&[0, 0, 2]), 6.0);
}

#[test]
fn dwconv_matches_direct_loop_oracle() {
    let mut r = rng(4);
    for k in [1, 3, 5, 7] {
        let x = Tensor::randn(&[3, 6, 5], 1.0, &mut r);
        let kern = Tensor::randn(&[3, k, k], 1.0, &mut r);
        let got = conv(&x, &kern).unwrap();
        assert!(got.max_abs_diff(&naive_dwconv(&x, &kern)) < 1e-12, "k = {k}");
    }
}

#[test]
fn dwconv_rejects_even_kernel() {
    let err = conv(&Tensor::ones(&[1, 4, 4]), &Tensor::ones(&[1, 2, 2])).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

// ---- unary -------------------------------------------------------------------

#[test]
fn unary_values() {
    let y = eval1(&t(&[1], &[0.0]), |tp, v| tp.gelu(v));
    assert_eq!(y.item(), 0.0);
    let y = eval1(&t(&[1], &[0.0]), |tp, v| tp.sigmoid(v));
    assert_eq!(y.item(), 0.5);
    let y = eval1(&t(&[1], &[10.0]), |tp, v| tp.gelu(v));
    assert!((y.item() - 10.0).abs() < 1e-6);
    let y = eval1(&t(&[1], &[1.0]), |tp, v| tp.gelu(v));
    let phi1 = 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
    assert!((y.item() - phi1).abs() < 1e-14);
    assert!((y.item() - 0.841345).abs() < 1e-6);
    let y = eval1(&t(&[3], &[-2.0, 0.0, 3.0]), |tp, v| tp.relu(v));
    assert_eq!(y.data(), &[0.0, 0.0, 3.0]);
}

#[test]
fn unknown_activation_is_config_error() {
    assert!(matches!("swish".parse::<Unary>(), Err(Error::Config(_))));
    assert_eq!("gelu".parse::<Unary>().unwrap(), Unary::Gelu);
}

// ---- backward ----------------------------------------------------------------

#[test]
fn backward_sum_of_squares() {
    let x = t(&[4], &[1.0, -2.0, 0.5, 3.0]);
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let sq = tape.mul(v, v).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    let g = tape.grad(v).unwrap();
    for (gi, xi) in g.iter().zip(x.data()) {
        assert_eq!(*gi, 2.0 * xi);
    }
}

#[test]
fn backward_sum_of_product_gives_transposed_ones() {
    let mut r = rng(5);
    let a = Tensor::randn(&[2, 3], 1.0, &mut r);
    let b = Tensor::randn(&[3, 4], 1.0, &mut r);
    let mut tape = Tape::new();
    let (av, bv) = (tape.param(a.clone()), tape.param(b.clone()));
    let c = tape.matmul(av, bv).unwrap();
    let loss = tape.sum(c);
    tape.backward(loss).unwrap();
    // dA[i,p] = Σ_j B[p,j]; dB[p,j] = Σ_i A[i,p]
    let da = tape.grad(av).unwrap();
    for i in 0..2 {
        for p in 0..3 {
            let expect: f64 = (0..4).map(|j| b.at(&[p, j])).sum();
            assert!((da[i * 3 + p] - expect).abs() < 1e-14);
        }
    }
    let db = tape.grad(bv).unwrap();
    for p in 0..3 {
        for j in 0..4 {
            let expect: f64 = (0..2).map(|i| a.at(&[i, p])).sum();
            assert!((db[p * 4 + j] - expect).abs() < 1e-14);
        }
    }
}

#[test]
fn backward_contract() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::ones(&[2]));
    let unused = tape.param(Tensor::ones(&[3]));
    let y = tape.scale(x, 3.0);
    assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[3.0, 3.0]);
    assert_eq!(tape.grad(unused).unwrap(), &[0.0, 0.0, 0.0]);
    // accumulation without reset
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[6.0, 6.0]);
    tape.zero_grad();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
}

#[test]
fn backward_is_linear() {
    let mut r = rng(6);
    let x = Tensor::randn(&[3, 3], 1.0, &mut r);
    let build = |tape: &mut Tape, v: Var| {
        let s = tape.softmax(v);
        let l1 = tape.mul(s, v).unwrap();
        let l1 = tape.sum(l1);
        let g = tape.gelu(v);
        let l2 = tape.sum(g);
        (l1, l2)
    };
    let grads = |which: u8| {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let (l1, l2) = build(&mut tape, v);
        let loss = match which {
            0 => l1,
            1 => l2,
            _ => tape.add(l1, l2).unwrap(),
        };
        tape.backward(loss).unwrap();
        tape.grad(v).unwrap().to_vec()
    };
    let (g1, g2, g12) = (grads(0), grads(1), grads(2));
    for i in 0..9 {
        assert!((g1[i] + g2[i] - g12[i]).abs() < 1e-14);
    }
}

// ---- gradient checks ---------------------------------------------------------

const H: f64 = 1e-5;

fn check_many(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var, Error>) -> f64 {
    grad_check_many(f, inputs, H, None).unwrap().max_rel_error
}

/// Weighted sum so every output element carries a distinct cotangent.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, Error> {
    let mut r = rng(seed);
    let w = tape.constant(Tensor::randn(tape.shape(y), 1.0, &mut r));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

#[test]
fn primitives_pass_grad_check() {
    let mut r = rng(7);
    let a = Tensor::randn(&[3, 4], 1.0, &mut r);
    let b = Tensor::randn(&[4, 2], 1.0, &mut r);
    let bt = Tensor::randn(&[5, 4], 1.0, &mut r);
    let v4 = Tensor::randn(&[4], 1.0, &mut r);
    let a2 = Tensor::randn(&[3, 4], 1.0, &mut r);
    let img = Tensor::randn(&[2, 4, 5], 1.0, &mut r);
    let kern = Tensor::randn(&[2, 3, 3], 1.0, &mut r);

    let cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, Error>>)> = vec![
        ("matmul", vec![a.clone(), b.clone()], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, 1)
        })),
        ("matmul_bt", vec![a.clone(), bt.clone()], Box::new(|t, v| {
            let y = t.matmul_bt(v[0], v[1])?;
            weighted_sum(t, y, 2)
        })),
        ("add/sub/mul", vec![a.clone(), a2.clone()], Box::new(|t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(v[0], v[1])?;
            let y = t.mul(s, d)?;
            weighted_sum(t, y, 3)
        })),
        ("add_row/mul_row", vec![a.clone(), v4.clone()], Box::new(|t, v| {
            let y = t.add_row(v[0], v[1])?;
            let y = t.mul_row(y, v[1])?;
            weighted_sum(t, y, 4)
        })),
        ("softmax", vec![a.clone()], Box::new(|t, v| {
            let y = t.softmax(v[0]);
            weighted_sum(t, y, 5)
        })),
        ("layer_norm", vec![a.clone(), v4.clone(), Tensor::randn(&[4], 1.0, &mut rng(9))], Box::new(|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weighted_sum(t, y, 6)
        })),
        ("dwconv2d", vec![img.clone(), kern.clone()], Box::new(|t, v| {
            let y = t.dwconv2d(v[0], v[1])?;
            weighted_sum(t, y, 7)
        })),
        ("gelu", vec![a.clone()], Box::new(|t, v| {
            let y = t.gelu(v[0]);
            weighted_sum(t, y, 8)
        })),
        ("sigmoid", vec![a.clone()], Box::new(|t, v| {
            let y = t.sigmoid(v[0]);
            weighted_sum(t, y, 9)
        })),
        ("relu", vec![a.clone()], Box::new(|t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y, 10)
        })),
        ("layout", vec![img.clone()], Box::new(|t, v| {
            let p = t.permute3(v[0], [2, 0, 1])?;
            let n = t.narrow(p, 2, 1, 3)?;
            let c = t.concat(&[n, n], 1)?;
            let r = t.reshape(c, &[5, 12])?;
            let tr = t.transpose(r)?;
            weighted_sum(t, tr, 11)
        })),
        ("mean_rows/scale", vec![a.clone()], Box::new(|t, v| {
            let m = t.mean_rows(v[0])?;
            let y = t.scale(m, -2.5);
            weighted_sum(t, y, 12)
        })),
        ("cross_entropy", vec![t(&[4], &[0.3, -1.0, 2.0, 0.1])], Box::new(|t, v| t.cross_entropy(v[0], 2))),
    ];
    for (name, inputs, f) in cases {
        let err = check_many(&inputs, f);
        assert!(err < 1e-6, "{name}: {err}");
    }
}

#[test]
fn sum_of_squares_grad_check() {
    let x = Tensor::randn(&[6], 1.0, &mut rng(8));
    let err = grad_check(
        |t, v| {
            let sq = t.mul(v, v)?;
            Ok(t.sum(sq))
        },
        &x,
        H,
    )
    .unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn deep_composition_grad_check() {
    let mut r = rng(10);
    let x = Tensor::randn(&[4, 6], 1.0, &mut r);
    let w1 = Tensor::randn(&[6, 6], 0.5, &mut r);
    let w2 = Tensor::randn(&[6, 4], 0.5, &mut r);
    let err = check_many(&[x, w1, w2], |t, v| {
        let g = t.constant(Tensor::ones(&[6]));
        let b = t.constant(Tensor::zeros(&[6]));
        let h = t.matmul(v[0], v[1])?;
        let h = t.layer_norm(h, g, b, 1e-5)?;
        let h = t.gelu(h);
        let h = t.softmax(h);
        let h = t.matmul(h, v[2])?;
        let h = t.sigmoid(h);
        let m = t.mean_rows(h)?;
        t.cross_entropy(m, 1)
    });
    assert!(err < 1e-4, "{err}");
}
