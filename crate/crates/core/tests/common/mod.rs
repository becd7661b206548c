//! Test-only oracles: central finite differences and random fixtures.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mmerc::numerics::{ParamStore, Session, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Norm-wise relative error `‖a−b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Reduces any tensor to a scalar with fixed pseudo-random weights so that
/// gradients of normalizing ops (softmax, layer norm) are not trivially zero.
pub fn probe(tape: &mut Tape, out: Var) -> Var {
    let n = tape.value(out).numel();
    let w: Vec<f64> = (0..n).map(|k| ((k * 7 + 3) as f64).sin() + 0.3).collect();
    let y = tape.mul_const(out, w).unwrap();
    tape.sum(y)
}

/// Relative error between analytic and central-difference gradients of a
/// scalar function of free input tensors, one entry per input.
pub fn check_inputs(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();

    let eval = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let l = f(&mut t, &vs);
        t.value(l).item()
    };
    let mut errs = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[e] += FD_STEP;
            let up = eval(&xs);
            xs[k].data_mut()[e] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        errs.push(rel_err(analytic[k].data(), &numeric));
    }
    errs
}

/// Same check against every parameter of a store, driven through a
/// [`Session`]. Returns the relative error per parameter path.
pub fn check_store(store: &ParamStore, f: impl Fn(&mut Session) -> Var) -> BTreeMap<String, f64> {
    let mut sess = Session::new(store, true);
    let loss = f(&mut sess);
    sess.tape.backward(loss).unwrap();
    let analytic = sess.grads();
    drop(sess);

    let eval = |s: &ParamStore| {
        let mut sess = Session::new(s, false);
        let l = f(&mut sess);
        sess.tape.value(l).item()
    };
    let mut out = BTreeMap::new();
    for (path, value) in store.iter() {
        let mut numeric = vec![0.0; value.numel()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let mut s = store.clone();
            s.get_mut(path).unwrap().data_mut()[e] += FD_STEP;
            let up = eval(&s);
            s.get_mut(path).unwrap().data_mut()[e] -= 2.0 * FD_STEP;
            let down = eval(&s);
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let a = analytic
            .get(path)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(value.shape()));
        out.insert(path.to_string(), rel_err(a.data(), &numeric));
    }
    out
}

/// Dense row-major matrix used by the loop oracles.
pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    let c = t.cols();
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

pub fn tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

/// `a · bᵀ`.
pub fn mm_t(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            b.iter()
                .map(|brow| row.iter().zip(brow).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect()
}

pub fn madd(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn add_row(a: &Mat, bias: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(bias).map(|(x, b)| x + b).collect())
        .collect()
}

pub fn relu(a: &Mat) -> Mat {
    a.iter()
        .map(|r| r.iter().map(|x| x.max(0.0)).collect())
        .collect()
}

pub fn mscale(a: &Mat, s: f64) -> Mat {
    a.iter()
        .map(|r| r.iter().map(|x| x * s).collect())
        .collect()
}

pub fn softmax_row(r: &[f64]) -> Vec<f64> {
    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn layer_norm(a: &Mat, gamma: &[f64], beta: &[f64], eps: f64) -> Mat {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(k, x)| (x - mean) / (var + eps).sqrt() * gamma[k] + beta[k])
                .collect()
        })
        .collect()
}

pub fn hcat(parts: &[Mat]) -> Mat {
    (0..parts[0].len())
        .map(|i| parts.iter().flat_map(|p| p[i].iter().cloned()).collect())
        .collect()
}

pub fn columns(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

/// Multi-head scaled dot-product attention built score matrix by score
/// matrix. Returns the output and each head's weights.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> (Mat, Vec<Mat>) {
    let (hk, hv) = (q[0].len() / heads, v[0].len() / heads);
    let mut outs = Vec::new();
    let mut weights = Vec::new();
    for h in 0..heads {
        let (qh, kh, vh) = (
            columns(q, h * hk, hk),
            columns(k, h * hk, hk),
            columns(v, h * hv, hv),
        );
        let mut w = Mat::new();
        for qi in &qh {
            let scores: Vec<f64> = kh
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (hk as f64).sqrt())
                .collect();
            w.push(softmax_row(&scores));
        }
        outs.push(mm(&w, &vh));
        weights.push(w);
    }
    (hcat(&outs), weights)
}

pub fn max_diff(a: &Mat, t: &Tensor) -> f64 {
    let b = mat(t);
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Fills every array of `store` with uniform noise in `[-scale, scale]`,
/// leaving layer-norm gains near 1.
pub fn randomize(store: &mut ParamStore, scale: f64, rng: &mut impl Rng) {
    let paths: Vec<String> = store.paths().map(String::from).collect();
    for p in paths {
        let t = store.get_mut(&p).unwrap();
        let gain = p.ends_with(".gamma");
        for v in t.data_mut().iter_mut() {
            let r = rng.gen_range(-scale..scale);
            *v = if gain { 1.0 + r } else { r };
        }
    }
}

pub fn param_mat(store: &ParamStore, path: &str) -> Mat {
    mat(store.get(path).unwrap())
}

pub fn param_vec(store: &ParamStore, path: &str) -> Vec<f64> {
    store.get(path).unwrap().data().to_vec()
}

pub fn tiny_meta(n_labels: usize) -> mmerc::dataio::CorpusMeta {
    mmerc::dataio::CorpusMeta {
        d_a: 3,
        d_v: 4,
        d_l: 5,
        n_labels,
        n_speakers: 2,
        label_names: (0..n_labels).map(|k| format!("c{k}")).collect(),
    }
}

/// Narrow widths so that finite-difference sweeps stay cheap.
pub fn tiny_run_config() -> mmerc::harness::RunConfig {
    mmerc::harness::RunConfig {
        d_h: 4,
        d_v: 4,
        d_h1: 3,
        d_h2: 2,
        d_alpha: 2,
        heads: 2,
        pcm_heads: 2,
        pcm_depth: 1,
        text_heads: 2,
        past: 1,
        future: 1,
        dropout: 0.0,
        ..mmerc::harness::RunConfig::default()
    }
}

pub fn tiny_conversation(
    meta: &mmerc::dataio::CorpusMeta,
    n: usize,
    seed: u64,
) -> mmerc::dataio::Conversation {
    let mut r = rng(seed);
    let mut row = |d: usize| -> Vec<f64> { (0..d).map(|_| r.gen_range(-1.0..1.0)).collect() };
    let utterances = (0..n)
        .map(|i| mmerc::dataio::Utterance {
            speaker: i % meta.n_speakers,
            label: (i * 7 + seed as usize) % meta.n_labels,
            audio: row(meta.d_a),
            visual: row(meta.d_v),
            text: vec![row(meta.d_l), row(meta.d_l)],
        })
        .collect();
    mmerc::dataio::Conversation {
        id: format!("tiny-{seed}"),
        utterances,
    }
}
pub mod metrics_oracle;

/// Worst relative finite-difference error of every differentiable tape
/// op, one entry per op and configuration.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    fn record(
        out: &mut Vec<(&'static str, f64)>,
        name: &'static str,
        inputs: &[Tensor],
        f: impl Fn(&mut Tape, &[Var]) -> Var,
    ) {
        let worst = check_inputs(inputs, f).into_iter().fold(0.0, f64::max);
        out.push((name, worst));
    }
    let mut out = Vec::new();
    let mut r = rng(31);
    let a = random(&[3, 4], &mut r);
    let b = random(&[4, 2], &mut r);
    let bt = random(&[2, 4], &mut r);
    let at = random(&[4, 3], &mut r);
    let c = random(&[3, 4], &mut r);

    record(&mut out, "matmul", &[a.clone(), b.clone()], |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        probe(t, y)
    });
    record(&mut out, "matmul_t", &[a.clone(), bt.clone()], |t, v| {
        let y = t.matmul_t(v[0], v[1]).unwrap();
        probe(t, y)
    });
    record(&mut out, "matmul tA", &[at.clone(), b.clone()], |t, v| {
        let y = t.matmul_ext(v[0], v[1], true, false).unwrap();
        probe(t, y)
    });
    record(&mut out, "matmul tA tB", &[at, bt], |t, v| {
        let y = t.matmul_ext(v[0], v[1], true, true).unwrap();
        probe(t, y)
    });
    record(&mut out, "add", &[a.clone(), c.clone()], |t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        probe(t, y)
    });
    record(&mut out, "mul", &[a.clone(), c.clone()], |t, v| {
        let y = t.mul(v[0], v[1]).unwrap();
        probe(t, y)
    });
    record(
        &mut out,
        "add_bias",
        &[a.clone(), random(&[4], &mut r)],
        |t, v| {
            let y = t.add_bias(v[0], v[1]).unwrap();
            probe(t, y)
        },
    );
    record(&mut out, "scale", std::slice::from_ref(&a), |t, v| {
        let y = t.scale(v[0], -1.7);
        probe(t, y)
    });
    record(&mut out, "relu", std::slice::from_ref(&a), |t, v| {
        let y = t.relu(v[0]);
        probe(t, y)
    });
    for axis in 0..2 {
        record(&mut out, "softmax", std::slice::from_ref(&a), |t, v| {
            let y = t.softmax(v[0], axis).unwrap();
            probe(t, y)
        });
    }
    let mask: Vec<bool> = (0..12).map(|k| k % 3 != 1 && k != 4).collect();
    record(
        &mut out,
        "masked_softmax",
        std::slice::from_ref(&a),
        |t, v| {
            let y = t.masked_softmax(v[0], &mask).unwrap();
            probe(t, y)
        },
    );
    record(
        &mut out,
        "layer_norm",
        &[a.clone(), random(&[4], &mut r), random(&[4], &mut r)],
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            probe(t, y)
        },
    );
    for axis in 0..2 {
        record(&mut out, "concat", &[a.clone(), c.clone()], |t, v| {
            let y = t.concat(&[v[0], v[1], v[0]], axis).unwrap();
            probe(t, y)
        });
        record(&mut out, "narrow", std::slice::from_ref(&a), |t, v| {
            let y = t.narrow(v[0], axis, 1, 2).unwrap();
            probe(t, y)
        });
    }
    record(&mut out, "gather_rows", std::slice::from_ref(&a), |t, v| {
        let y = t.gather_rows(v[0], &[2, 0, 2, 1]).unwrap();
        probe(t, y)
    });
    let edges = [(0, 1, 0.5), (2, 1, 0.5), (1, 0, 1.0), (1, 1, 2.0)];
    record(&mut out, "aggregate", std::slice::from_ref(&a), |t, v| {
        let y = t.aggregate(v[0], &edges, 2).unwrap();
        probe(t, y)
    });
    record(&mut out, "mul_const", std::slice::from_ref(&a), |t, v| {
        let y = t
            .mul_const(v[0], (0..12).map(|k| k as f64 - 5.0).collect())
            .unwrap();
        probe(t, y)
    });
    record(
        &mut out,
        "cross_entropy",
        std::slice::from_ref(&a),
        |t, v| t.cross_entropy(v[0], &[3, 0, 1]).unwrap(),
    );
    record(&mut out, "mean", std::slice::from_ref(&a), |t, v| {
        let y = t.mul(v[0], v[0]).unwrap();
        t.mean(y)
    });
    let ids = [1usize, 0, 1];
    record(
        &mut out,
        "embedding_lookup",
        std::slice::from_ref(&a),
        |t, v| {
            let y = t.embedding_lookup(v[0], &ids).unwrap();
            probe(t, y)
        },
    );
    record(&mut out, "dropout", std::slice::from_ref(&a), |t, v| {
        let mut mask_rng = rng(5);
        let y = t.dropout(v[0], 0.4, true, &mut mask_rng).unwrap();
        probe(t, y)
    });
    record(&mut out, "sum", std::slice::from_ref(&a), |t, v| {
        let y = t.mul(v[0], v[0]).unwrap();
        t.sum(y)
    });
    out
}
