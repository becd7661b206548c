//! Fusion of the graph and cross-modal representations and the utterance
//! classifier.

use rand::Rng;

use crate::encoders::projection;
use crate::error::{Error, Result};
use crate::numerics::{Init, ParamStore, Session, Tensor, Var};

pub const PREFIX: &str = "head";

/// Default hidden width: half the fused width, rounded up.
pub fn default_hidden(d_fused: usize) -> usize {
    d_fused.div_ceil(2)
}

pub fn init_head<R: Rng + ?Sized>(
    store: &mut ParamStore,
    d_fused: usize,
    hidden: usize,
    n_labels: usize,
    rng: &mut R,
) -> Result<()> {
    if d_fused == 0 {
        return Err(Error::Config("fused representation has width 0".into()));
    }
    if hidden == 0 || n_labels == 0 {
        return Err(Error::Config("classifier widths must be positive".into()));
    }
    projection(store, format!("{PREFIX}.phi0"), d_fused, hidden, rng)?;
    store.insert(format!("{PREFIX}.b0"), Init::Zeros.sample(&[hidden], rng))?;
    projection(store, format!("{PREFIX}.phi1"), hidden, n_labels, rng)?;
    store.insert(format!("{PREFIX}.b1"), Init::Zeros.sample(&[n_labels], rng))
}

/// Feature-wise concatenation of per-utterance blocks, in the given order.
pub fn fuse(sess: &mut Session, parts: &[Var]) -> Result<Var> {
    let Some(&first) = parts.first() else {
        return Err(Error::Config("nothing to fuse".into()));
    };
    let n = sess.tape.value(first).rows();
    if let Some(&bad) = parts.iter().find(|&&p| sess.tape.value(p).rows() != n) {
        return Err(Error::shape(
            "fuse",
            sess.tape.shape(first),
            sess.tape.shape(bad),
        ));
    }
    if parts.len() == 1 {
        return Ok(first);
    }
    sess.tape.concat(parts, 1)
}

/// `ReLU(H Φ_0 + b_0) Φ_1 + b_1`.
pub fn logits(sess: &mut Session, h: Var) -> Result<Var> {
    let phi0 = sess.param(&format!("{PREFIX}.phi0"))?;
    if sess.tape.value(phi0).rows() != sess.tape.value(h).cols() {
        return Err(Error::shape(
            "classify",
            sess.tape.shape(h),
            sess.tape.shape(phi0),
        ));
    }
    let b0 = sess.param(&format!("{PREFIX}.b0"))?;
    let phi1 = sess.param(&format!("{PREFIX}.phi1"))?;
    let b1 = sess.param(&format!("{PREFIX}.b1"))?;
    let v = sess.tape.matmul(h, phi0)?;
    let v = sess.tape.add_bias(v, b0)?;
    let v = sess.tape.relu(v);
    let z = sess.tape.matmul(v, phi1)?;
    sess.tape.add_bias(z, b1)
}

pub struct Classified {
    pub logits: Var,
    /// Row-wise softmax of the logits, `[N × M]`.
    pub probs: Tensor,
    pub predictions: Vec<usize>,
}

pub fn classify(sess: &mut Session, h: Var) -> Result<Classified> {
    let z = logits(sess, h)?;
    let p = sess.tape.softmax(z, 1)?;
    let probs = sess.tape.value(p).clone();
    let predictions = argmax_rows(&probs);
    Ok(Classified {
        logits: z,
        probs,
        predictions,
    })
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let m = t.cols();
    t.data()
        .chunks(m)
        .map(|row| {
            let mut best = 0;
            for k in 1..m {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Mean negative log-likelihood of `labels`, computed stably from logits.
pub fn objective(sess: &mut Session, logits: Var, labels: &[usize]) -> Result<Var> {
    sess.tape.cross_entropy(logits, labels)
}

/// Mean negative log-likelihood read directly off probabilities.
pub fn nll_from_probs(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.rows() {
        return Err(Error::shape(
            "nll_from_probs",
            probs.shape(),
            &[labels.len()],
        ));
    }
    let m = probs.cols();
    let mut total = 0.0;
    for (row, &y) in probs.data().chunks(m).zip(labels) {
        if y >= m {
            return Err(Error::Index {
                what: "label",
                index: y,
                len: m,
            });
        }
        total -= row[y].ln();
    }
    Ok(total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let t = Tensor::from_rows(&[[0.25, 0.25, 0.25, 0.25], [0.1, 0.5, 0.5, 0.0]]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1]);
    }

    #[test]
    fn nll_examples() {
        let one_hot = Tensor::from_rows(&[[0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(nll_from_probs(&one_hot, &[1]).unwrap(), 0.0);
        let uniform = Tensor::full(&[2, 6], 1.0 / 6.0);
        assert!((nll_from_probs(&uniform, &[0, 5]).unwrap() - 6f64.ln()).abs() < 1e-12);
        assert!(nll_from_probs(&uniform, &[6, 0]).is_err());
    }

    #[test]
    fn hidden_width_rounds_up() {
        assert_eq!(default_hidden(5400), 2700);
        assert_eq!(default_hidden(7), 4);
    }
}
