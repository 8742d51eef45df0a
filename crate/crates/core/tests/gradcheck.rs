mod common;

use std::time::Instant;

use common::{end_to_end_gradcheck, random_tensor};
use nli_lab::model::HeadKind;
use nli_lab::rng::SplitMix64;
use nli_lab::tensor::{gradcheck_many, Tape, Tensor, TensorError, Var};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const CASES: u64 = 24;

/// Reduces `y` to a scalar through fixed random weights, so every output
/// element carries a distinct gradient (a plain sum would make softmax's
/// gradient vanish identically).
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let w = random_tensor(tape.shape(y).to_vec(), &mut SplitMix64::new(seed ^ 0xabc));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn dims(rng: &mut SplitMix64, lo: u64, hi: u64) -> usize {
    (lo + rng.below(hi - lo + 1)) as usize
}

fn check<F>(name: &str, seed: u64, f: F, inputs: &[Tensor])
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let r = gradcheck_many(f, inputs, STEP, TOL).unwrap();
    assert!(r.passed, "{name} case {seed}: max rel error {} at {:?}", r.max_rel_error, r.worst);
    assert!(r.checked > 0);
}

#[test]
fn matmul_random_shapes() {
    for seed in 0..CASES {
        let mut rng = SplitMix64::new(seed);
        let (m, k, n) = (dims(&mut rng, 1, 5), dims(&mut rng, 1, 5), dims(&mut rng, 1, 5));
        let inputs = [random_tensor(vec![m, k], &mut rng), random_tensor(vec![k, n], &mut rng)];
        check(
            "matmul",
            seed,
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y, seed)
            },
            &inputs,
        );
    }
}

#[test]
fn batch_matmul_random_shapes() {
    for seed in 0..CASES {
        let mut rng = SplitMix64::new(seed + 100);
        let (b, m, k, n) = (
            dims(&mut rng, 1, 3),
            dims(&mut rng, 1, 4),
            dims(&mut rng, 1, 4),
            dims(&mut rng, 1, 4),
        );
        let transpose = seed % 2 == 0;
        let rhs = if transpose { vec![b, n, k] } else { vec![b, k, n] };
        let inputs = [random_tensor(vec![b, m, k], &mut rng), random_tensor(rhs, &mut rng)];
        check(
            "batch_matmul",
            seed,
            |t, v| {
                let y = t.batch_matmul(v[0], v[1], transpose)?;
                weighted_sum(t, y, seed)
            },
            &inputs,
        );
    }
}

#[test]
fn softmax_random_shapes_and_axes() {
    for seed in 0..CASES {
        let mut rng = SplitMix64::new(seed + 200);
        let shape = vec![dims(&mut rng, 1, 4), dims(&mut rng, 2, 5), dims(&mut rng, 1, 3)];
        let axis = rng.below(3) as usize;
        let inputs = [random_tensor(shape, &mut rng)];
        check(
            "softmax",
            seed,
            |t, v| {
                let y = t.softmax(v[0], axis)?;
                weighted_sum(t, y, seed)
            },
            &inputs,
        );
    }
}

#[test]
fn layernorm_random_shapes() {
    for seed in 0..CASES {
        let mut rng = SplitMix64::new(seed + 300);
        let (rows, n) = (dims(&mut rng, 1, 5), dims(&mut rng, 2, 8));
        let inputs = [
            random_tensor(vec![rows, n], &mut rng),
            random_tensor(vec![n], &mut rng),
            random_tensor(vec![n], &mut rng),
        ];
        check(
            "layernorm",
            seed,
            |t, v| {
                let y = t.layernorm(v[0], v[1], v[2], 1e-12)?;
                weighted_sum(t, y, seed)
            },
            &inputs,
        );
    }
}

#[test]
fn gelu_random_shapes() {
    for seed in 0..CASES {
        let mut rng = SplitMix64::new(seed + 400);
        let inputs = [random_tensor(vec![dims(&mut rng, 1, 6), dims(&mut rng, 1, 6)], &mut rng)];
        check(
            "gelu",
            seed,
            |t, v| {
                let y = t.gelu(v[0]);
                weighted_sum(t, y, seed)
            },
            &inputs,
        );
    }
}

#[test]
fn gather_rows_random_ids() {
    for seed in 0..CASES {
        let mut rng = SplitMix64::new(seed + 500);
        let (rows, cols, n) = (dims(&mut rng, 1, 6), dims(&mut rng, 1, 4), dims(&mut rng, 1, 8));
        // repeated ids exercise gradient accumulation into one row
        let ids: Vec<usize> = (0..n).map(|_| rng.below(rows as u64) as usize).collect();
        let inputs = [random_tensor(vec![rows, cols], &mut rng)];
        check(
            "gather_rows",
            seed,
            |t, v| {
                let y = t.gather_rows(v[0], &ids)?;
                weighted_sum(t, y, seed)
            },
            &inputs,
        );
    }
}

#[test]
fn cross_entropy_random_labels() {
    for seed in 0..CASES {
        let mut rng = SplitMix64::new(seed + 600);
        let (rows, classes) = (dims(&mut rng, 1, 6), dims(&mut rng, 2, 5));
        let labels: Vec<usize> = (0..rows)
            .map(|i| {
                if i > 0 && rng.below(4) == 0 {
                    usize::MAX
                } else {
                    rng.below(classes as u64) as usize
                }
            })
            .collect();
        let inputs = [random_tensor(vec![rows, classes], &mut rng)];
        check("cross_entropy", seed, |t, v| t.cross_entropy(v[0], &labels, usize::MAX), &inputs);
    }
}

#[test]
fn composite_attention_block() {
    // scores -> mask -> softmax -> context, the attention core in miniature
    for seed in 0..CASES {
        let mut rng = SplitMix64::new(seed + 700);
        let (b, s, h) = (dims(&mut rng, 1, 2), dims(&mut rng, 2, 4), 2usize);
        let d = h * 2;
        let mut mask: Vec<bool> = (0..b * s).map(|_| rng.below(3) != 0).collect();
        for i in 0..b {
            mask[i * s] = true;
        }
        let inputs = [random_tensor(vec![b * s, d], &mut rng), random_tensor(vec![d, d], &mut rng)];
        check(
            "attention",
            seed,
            |t, v| {
                let x = t.matmul(v[0], v[1])?;
                let q = t.split_heads(x, b, s, h)?;
                let k = t.split_heads(v[0], b, s, h)?;
                let scores = t.batch_matmul(q, k, true)?;
                let scores = t.mask_keys(scores, &mask, h)?;
                let p = t.softmax(scores, 2)?;
                let ctx = t.batch_matmul(p, k, false)?;
                let y = t.merge_heads(ctx, b, s, h)?;
                weighted_sum(t, y, seed)
            },
            &inputs,
        );
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = SplitMix64::new(9);
        let mut t = Tape::new();
        let x = t.param(random_tensor(vec![4, 6], &mut rng));
        let w = t.param(random_tensor(vec![6, 3], &mut rng));
        let y = t.matmul(x, w).unwrap();
        let y = t.gelu(y);
        let loss = t.cross_entropy(y, &[0, 2, 1, 2], usize::MAX).unwrap();
        t.backward(loss).unwrap();
        (t.grad(x).unwrap().to_vec(), t.grad(w).unwrap().to_vec())
    };
    let (a, b) = (run(), run());
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.0), bits(&b.0));
    assert_eq!(bits(&a.1), bits(&b.1));
}

#[test]
fn end_to_end_both_heads() {
    let start = Instant::now();
    for kind in [HeadKind::Cls, HeadKind::NerToken] {
        let r = end_to_end_gradcheck(kind, 5, STEP, TOL);
        assert!(r.passed, "{kind}: max rel error {} at {:?}", r.max_rel_error, r.worst);
        assert!(r.checked > 4500, "{kind}: only {} elements checked", r.checked);
    }
    assert!(start.elapsed().as_secs() < 60, "took {:?}", start.elapsed());
}
