//! Reference implementations shared by the oracle tests and the acceptance run.

use facile::losses::{self, ContrastiveBatch};
use facile::tensor::{Tape, Tensor, Var};
use facile::Result;

use super::{rng, uniform};

pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let c = tape.constant(uniform(&mut rng(seed ^ 0xC0FFEE), &shape, -1.0, 1.0));
    let m = tape.mul(out, c)?;
    tape.sum_all(m)
}

pub type Build = fn(&mut Tape, Var, Var) -> Result<Var>;

/// `(name, shape of a, shape of b, lower bound of a, op)`.
pub fn primitives() -> Vec<(&'static str, Vec<usize>, Vec<usize>, f64, Build)> {
    vec![
        ("matmul", vec![3, 4], vec![4, 2], -1.0, |t, a, b| t.matmul(a, b)),
        ("add", vec![3, 4], vec![3, 4], -1.0, |t, a, b| t.add(a, b)),
        ("sub", vec![3, 4], vec![3, 4], -1.0, |t, a, b| t.sub(a, b)),
        ("mul", vec![3, 4], vec![3, 4], -1.0, |t, a, b| t.mul(a, b)),
        ("relu", vec![3, 4], vec![1], -1.0, |t, a, _| Ok(t.relu(a))),
        ("exp", vec![3, 4], vec![1], -1.0, |t, a, _| Ok(t.exp(a))),
        ("log", vec![3, 4], vec![1], 0.5, |t, a, _| t.log(a)),
        ("tanh", vec![3, 4], vec![1], -1.0, |t, a, _| Ok(t.tanh(a))),
        ("abs", vec![3, 4], vec![1], -1.0, |t, a, _| Ok(t.abs(a))),
        ("scale", vec![3, 4], vec![1], -1.0, |t, a, _| Ok(t.scale(a, -2.5))),
        ("neg", vec![3, 4], vec![1], -1.0, |t, a, _| Ok(t.neg(a))),
        ("softmax_rows", vec![3, 4], vec![1], -1.0, |t, a, _| t.softmax(a, 1)),
        ("softmax_cols", vec![3, 4], vec![1], -1.0, |t, a, _| t.softmax(a, 0)),
        ("log_softmax", vec![3, 4], vec![1], -1.0, |t, a, _| t.log_softmax(a, 1)),
        ("sum", vec![3, 4], vec![1], -1.0, |t, a, _| t.sum(a, 0)),
        ("mean", vec![3, 4], vec![1], -1.0, |t, a, _| t.mean(a, 1)),
        ("max", vec![3, 4], vec![1], -1.0, |t, a, _| t.max(a, 0)),
        ("sum_all", vec![3, 4], vec![1], -1.0, |t, a, _| t.sum_all(a)),
        ("mean_all", vec![3, 4], vec![1], -1.0, |t, a, _| t.mean_all(a)),
        ("concat_rows", vec![2, 3], vec![4, 3], -1.0, |t, a, b| t.concat(&[a, b, a], 0)),
        ("concat_cols", vec![3, 2], vec![3, 4], -1.0, |t, a, b| t.concat(&[b, a], 1)),
        ("transpose", vec![3, 4], vec![1], -1.0, |t, a, _| t.transpose(a)),
        ("l2_normalize", vec![3, 4], vec![1], -1.0, |t, a, _| t.l2_normalize(a, 1, 1e-12)),
        ("cosine", vec![3, 4], vec![3, 4], -1.0, |t, a, b| t.cosine_similarity(a, b, 1e-12)),
        ("broadcast_add", vec![3, 4], vec![4], -1.0, |t, a, b| t.broadcast_add(a, b)),
        ("pick", vec![3, 4], vec![1], -1.0, |t, a, _| t.pick(a, &[3, 0, 2])),
        ("slice_rows", vec![4, 3], vec![1], -1.0, |t, a, _| t.slice_rows(a, 1, 3)),
        ("slice_cols", vec![3, 4], vec![1], -1.0, |t, a, _| t.slice_cols(a, 1, 4)),
        ("reshape", vec![3, 4], vec![1], -1.0, |t, a, _| t.reshape(a, vec![2, 6])),
    ]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Literal NT-Xent: mean over all 2N anchors.
pub fn simclr_oracle(z: &[Vec<f64>], tau: f64) -> f64 {
    let rows = z.len();
    let mut total = 0.0;
    for i in 0..rows {
        let pos = if i % 2 == 0 { i + 1 } else { i - 1 };
        let mut denom = 0.0;
        for a in 0..rows {
            if a != i {
                denom += (dot(&z[i], &z[a]) / tau).exp();
            }
        }
        total += -((dot(&z[i], &z[pos]) / tau).exp() / denom).ln();
    }
    total / rows as f64
}

/// Literal SupCon with the log outside the positive average.
pub fn supcon_oracle(z: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let rows = z.len();
    let label = |i: usize| labels[i / 2];
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..rows {
        let mut denom = 0.0;
        for a in 0..rows {
            if a != i {
                denom += (dot(&z[i], &z[a]) / tau).exp();
            }
        }
        let mut sum = 0.0;
        let mut count = 0;
        for p in 0..rows {
            if p != i && label(p) == label(i) {
                sum += ((dot(&z[i], &z[p]) / tau).exp() / denom).ln();
                count += 1;
            }
        }
        if count > 0 {
            total += -sum / count as f64;
            anchors += 1;
        }
    }
    total / anchors as f64
}

pub fn simclr(z: &[Vec<f64>], tau: f64) -> f64 {
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::from_rows(z).unwrap());
    let batch = ContrastiveBatch {
        z: zv,
        labels: None,
        temperature: tau,
    };
    let l = losses::simclr_loss(&mut tape, &batch).unwrap();
    tape.value(l.mean).item().unwrap()
}

pub fn supcon(z: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::from_rows(z).unwrap());
    let batch = ContrastiveBatch {
        z: zv,
        labels: Some(labels.to_vec()),
        temperature: tau,
    };
    let l = losses::supcon_loss(&mut tape, &batch).unwrap();
    tape.value(l.mean).item().unwrap()
}
