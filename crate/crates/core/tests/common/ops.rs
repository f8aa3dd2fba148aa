//! Every tape op wrapped into a scalar function for finite-difference checks.

use puda_core::autograd::{grad_check_many, GradCheckReport, Tape, Tensor, Var};
use puda_core::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn sum_weighted(t: &mut Tape, y: Var) -> Result<Var> {
    // fixed uneven weights so every output coordinate matters
    let n = t.value(y).numel();
    let w = Tensor::new(
        t.shape(y).to_vec(),
        (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect(),
    )?;
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

pub fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("add", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| { let y = t.add(v[0], v[1])?; sum_weighted(t, y) })),
        ("add_broadcast", vec![vec![2, 3], vec![3]], Box::new(|t, v| { let y = t.add(v[0], v[1])?; sum_weighted(t, y) })),
        ("sub", vec![vec![4], vec![4]], Box::new(|t, v| { let y = t.sub(v[0], v[1])?; sum_weighted(t, y) })),
        ("mul", vec![vec![4], vec![4]], Box::new(|t, v| { let y = t.mul(v[0], v[1])?; sum_weighted(t, y) })),
        ("scale", vec![vec![3]], Box::new(|t, v| { let y = t.scale(v[0], -1.7); sum_weighted(t, y) })),
        ("lerp", vec![vec![3], vec![3]], Box::new(|t, v| { let y = t.lerp(v[0], v[1], 0.3)?; sum_weighted(t, y) })),
        ("lerp_rows", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| { let y = t.lerp_rows(v[0], v[1], &[0.3, 0.8])?; sum_weighted(t, y) })),
        ("matmul", vec![vec![2, 2, 3], vec![3, 4]], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; sum_weighted(t, y) })),
        ("batch_matmul", vec![vec![2, 2, 3], vec![2, 3, 2]], Box::new(|t, v| { let y = t.batch_matmul(v[0], v[1], false)?; sum_weighted(t, y) })),
        ("batch_matmul_t", vec![vec![2, 2, 3], vec![2, 4, 3]], Box::new(|t, v| { let y = t.batch_matmul(v[0], v[1], true)?; sum_weighted(t, y) })),
        ("gather_rows", vec![vec![4, 3]], Box::new(|t, v| { let y = t.gather_rows(v[0], &[2, 0, 2])?; sum_weighted(t, y) })),
        ("take", vec![vec![2, 3]], Box::new(|t, v| { let y = t.take(v[0], &[5, 1, 1])?; sum_weighted(t, y) })),
        ("reshape", vec![vec![2, 3]], Box::new(|t, v| { let y = t.reshape(v[0], &[3, 2])?; sum_weighted(t, y) })),
        ("sigmoid", vec![vec![5]], Box::new(|t, v| { let y = t.sigmoid(v[0]); sum_weighted(t, y) })),
        ("tanh", vec![vec![5]], Box::new(|t, v| { let y = t.tanh(v[0]); sum_weighted(t, y) })),
        ("gelu", vec![vec![5]], Box::new(|t, v| { let y = t.gelu(v[0]); sum_weighted(t, y) })),
        ("abs", vec![vec![5]], Box::new(|t, v| {
            // keep inputs away from the kink at 0
            let off = t.constant(Tensor::vector(vec![3.0, -3.0, 3.0, -3.0, 3.0]));
            let x = t.add(v[0], off)?;
            let y = t.abs(x);
            sum_weighted(t, y)
        })),
        ("square", vec![vec![5]], Box::new(|t, v| { let y = t.square(v[0]); sum_weighted(t, y) })),
        ("ln", vec![vec![5]], Box::new(|t, v| { let s = t.sigmoid(v[0]); let y = t.ln(s); sum_weighted(t, y) })),
        ("softplus", vec![vec![5]], Box::new(|t, v| { let y = t.softplus(v[0]); sum_weighted(t, y) })),
        ("softmax", vec![vec![2, 4]], Box::new(|t, v| { let y = t.softmax(v[0])?; sum_weighted(t, y) })),
        ("weighted_softmax", vec![vec![2, 2, 3]], Box::new(|t, v| {
            let w = Tensor::new(vec![2, 3], vec![1.0, 0.5, 0.0, 0.2, 1.0, 1.0])?;
            let y = t.weighted_softmax(v[0], Some(&w))?;
            sum_weighted(t, y)
        })),
        ("layer_norm", vec![vec![2, 4], vec![4], vec![4]], Box::new(|t, v| { let y = t.layer_norm(v[0], v[1], v[2])?; sum_weighted(t, y) })),
        ("sum", vec![vec![3]], Box::new(|t, v| { let s = t.square(v[0]); Ok(t.sum(s)) })),
        ("mean", vec![vec![3]], Box::new(|t, v| { let s = t.square(v[0]); t.mean(s) })),
    ]
}

/// Worst report per op over `trials` random points.
pub fn check_every_op(rng: &mut ChaCha8Rng, trials: usize, h: f64) -> Vec<(&'static str, GradCheckReport)> {
    op_cases()
        .into_iter()
        .map(|(name, shapes, f)| {
            let mut worst: Option<GradCheckReport> = None;
            for _ in 0..trials {
                let pts: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(rng, s)).collect();
                let r = grad_check_many(&f, &pts, h).unwrap();
                if worst.as_ref().is_none_or(|w| r.max_rel_error > w.max_rel_error) {
                    worst = Some(r);
                }
            }
            (name, worst.unwrap())
        })
        .collect()
}
