//! Random instances of every differentiable operation, paired with f64 references.

use super::shadow::{self as s, grad_check, randn, Instance, M};
use dmpt::backbone::LN_EPS;
use dmpt::prompt::{cavpt_aux_logits, generate_cavpt, AuxInput, CavptParams, ClassSelection};
use dmpt::rng::{seeded, DetRng};
use dmpt::tensor::{concat_cols, concat_rows, cosine_similarity, cross_entropy};
use rand::Rng;

pub const INSTANCES: usize = 20;
pub const TOLERANCE: f64 = 1e-4;

type Builder = fn(&mut DetRng) -> Instance;

fn m(v: &[f64], shape: &[usize]) -> M {
    let c = *shape.last().unwrap();
    M::new(v.len() / c, c, v.to_vec())
}

fn dims(rng: &mut DetRng) -> (usize, usize, usize) {
    (rng.random_range(1..5), rng.random_range(2..6), rng.random_range(1..5))
}

fn input(rng: &mut DetRng, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    (randn(rng, shape.iter().product(), 1.0), shape.to_vec())
}

fn matmul(rng: &mut DetRng) -> Instance {
    let (a, b, c) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b]), input(rng, &[b, c])],
        library: Box::new(|t| t[0].matmul(&t[1])),
        reference: Box::new(move |x| s::matmul(&m(&x[0], &[a, b]), &m(&x[1], &[b, c])).d),
    }
}

fn matmul_t(rng: &mut DetRng) -> Instance {
    let (a, b, c) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b]), input(rng, &[c, b])],
        library: Box::new(|t| t[0].matmul_t(&t[1])),
        reference: Box::new(move |x| s::matmul_t(&m(&x[0], &[a, b]), &m(&x[1], &[c, b])).d),
    }
}

fn transpose(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(|t| t[0].transpose()),
        reference: Box::new(move |x| s::transpose(&m(&x[0], &[a, b])).d),
    }
}

fn add(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b]), input(rng, &[a, b])],
        library: Box::new(|t| t[0].add(&t[1])),
        reference: Box::new(move |x| s::zip(&m(&x[0], &[a, b]), &m(&x[1], &[a, b]), |p, q| p + q).d),
    }
}

fn add_row(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b]), input(rng, &[b])],
        library: Box::new(|t| t[0].add_row(&t[1])),
        reference: Box::new(move |x| s::add_row(&m(&x[0], &[a, b]), &x[1]).d),
    }
}

fn mul(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b]), input(rng, &[a, b])],
        library: Box::new(|t| t[0].mul(&t[1])),
        reference: Box::new(move |x| s::zip(&m(&x[0], &[a, b]), &m(&x[1], &[a, b]), |p, q| p * q).d),
    }
}

fn scale(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    let f = rng.random_range(-2.0f32..2.0);
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(move |t| Ok(t[0].scale(f))),
        reference: Box::new(move |x| x[0].iter().map(|v| v * f as f64).collect()),
    }
}

fn gelu(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    Instance {
        inputs: vec![(randn(rng, a * b, 2.0), vec![a, b])],
        library: Box::new(|t| Ok(t[0].gelu())),
        reference: Box::new(|x| x[0].iter().map(|&v| s::gelu(v)).collect()),
    }
}

fn softmax(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    let temp = [0.5f32, 1.0, 2.0][rng.random_range(0..3)];
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(move |t| t[0].softmax(temp)),
        reference: Box::new(move |x| s::softmax(&m(&x[0], &[a, b]), temp as f64).d),
    }
}

fn layer_norm(rng: &mut DetRng) -> Instance {
    let a = rng.random_range(1..4);
    let b = rng.random_range(4..9);
    Instance {
        inputs: vec![input(rng, &[a, b]), input(rng, &[b]), input(rng, &[b])],
        library: Box::new(|t| t[0].layer_norm(&t[1], &t[2], LN_EPS)),
        reference: Box::new(move |x| s::layer_norm(&m(&x[0], &[a, b]), &x[1], &x[2], LN_EPS as f64).d),
    }
}

fn cross_entropy_op(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    let targets: Vec<usize> = (0..a).map(|_| rng.random_range(0..b)).collect();
    let t2 = targets.clone();
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(move |t| cross_entropy(&t[0], &targets)),
        reference: Box::new(move |x| vec![s::cross_entropy(&m(&x[0], &[a, b]), &t2)]),
    }
}

fn cosine(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b]), input(rng, &[a, b])],
        library: Box::new(|t| cosine_similarity(&t[0], &t[1])),
        reference: Box::new(|x| vec![s::cosine(&x[0], &x[1])]),
    }
}

fn l2_normalize(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(|t| t[0].l2_normalize()),
        reference: Box::new(move |x| s::l2_normalize(&m(&x[0], &[a, b])).d),
    }
}

fn sum(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(|t| Ok(t[0].sum())),
        reference: Box::new(|x| vec![x[0].iter().sum()]),
    }
}

fn mean(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(|t| Ok(t[0].mean())),
        reference: Box::new(|x| vec![x[0].iter().sum::<f64>() / x[0].len() as f64]),
    }
}

fn concat_rows_op(rng: &mut DetRng) -> Instance {
    let (a, b, c) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b]), input(rng, &[c, b])],
        library: Box::new(|t| concat_rows(t)),
        reference: Box::new(move |x| s::concat_rows(&[&m(&x[0], &[a, b]), &m(&x[1], &[c, b])]).d),
    }
}

fn concat_cols_op(rng: &mut DetRng) -> Instance {
    let (a, b, c) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b]), input(rng, &[a, c])],
        library: Box::new(|t| concat_cols(t)),
        reference: Box::new(move |x| s::concat_cols(&[&m(&x[0], &[a, b]), &m(&x[1], &[a, c])]).d),
    }
}

fn slice_rows(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    let a = a + 1;
    let start = rng.random_range(0..a);
    let len = rng.random_range(1..=a - start);
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(move |t| t[0].slice_rows(start, len)),
        reference: Box::new(move |x| s::rows(&m(&x[0], &[a, b]), &(start..start + len).collect::<Vec<_>>()).d),
    }
}

fn slice_cols(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    let start = rng.random_range(0..b);
    let len = rng.random_range(1..=b - start);
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(move |t| t[0].slice_cols(start, len)),
        reference: Box::new(move |x| s::cols(&m(&x[0], &[a, b]), start, len).d),
    }
}

fn gather_rows(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    // always repeat at least one row so accumulation is exercised
    let mut idx: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..a)).collect();
    idx.push(idx[0]);
    let i2 = idx.clone();
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(move |t| t[0].gather_rows(&idx)),
        reference: Box::new(move |x| s::rows(&m(&x[0], &[a, b]), &i2).d),
    }
}

fn reshape(rng: &mut DetRng) -> Instance {
    let (a, b, _) = dims(rng);
    Instance {
        inputs: vec![input(rng, &[a, b])],
        library: Box::new(move |t| t[0].reshape(&[b, a])?.gelu().reshape(&[a * b])),
        reference: Box::new(|x| x[0].iter().map(|&v| s::gelu(v)).collect()),
    }
}

/// Pre-LN attention block assembled from primitives, like one encoder layer.
fn attention_block(rng: &mut DetRng) -> Instance {
    let n = rng.random_range(2..5);
    let d = rng.random_range(3..6);
    let w = 1.0 / (d as f64).sqrt();
    let mut inputs = vec![input(rng, &[n, d]), input(rng, &[d]), input(rng, &[d])];
    for _ in 0..3 {
        inputs.push((randn(rng, d * d, w), vec![d, d]));
    }
    Instance {
        inputs,
        library: Box::new(move |t| {
            let h = t[0].layer_norm(&t[1], &t[2], LN_EPS)?;
            let att = h.matmul(&t[3])?.matmul_t(&h.matmul(&t[4])?)?.scale(w as f32).softmax(1.0)?;
            t[0].add(&att.matmul(&h.matmul(&t[5])?)?.gelu())
        }),
        reference: Box::new(move |x| {
            let x0 = m(&x[0], &[n, d]);
            let h = s::layer_norm(&x0, &x[1], &x[2], LN_EPS as f64);
            let wm = |i: usize| m(&x[i], &[d, d]);
            let scores = s::map(&s::matmul_t(&s::matmul(&h, &wm(3)), &s::matmul(&h, &wm(4))), |v| v * (w as f32) as f64);
            let o = s::matmul(&s::softmax(&scores, 1.0), &s::matmul(&h, &wm(5)));
            s::zip(&x0, &s::map(&o, s::gelu), |p, q| p + q).d
        }),
    }
}

/// `α·CE` of the auxiliary head, differentiated through the whole generator.
fn aux_head(rng: &mut DetRng) -> Instance {
    let (kn, n, de, d, k) = (rng.random_range(1..4), rng.random_range(2..5), 3, 4, 5);
    let mut ids: Vec<usize> = (0..k).collect();
    ids.truncate(kn);
    let label = ids[rng.random_range(0..kn)];
    let alpha = 0.3f32;
    let combined = rng.random_bool(0.5);
    let aux = if combined { AuxInput::Combined } else { AuxInput::Attended };
    let sc = 0.5;
    let inputs = vec![
        input(rng, &[kn, de]),                   // g
        input(rng, &[n, d]),                     // layer inputs
        (randn(rng, de * d, sc), vec![de, d]),   // query map
        input(rng, &[d]),                        // query bias
        (randn(rng, d * d, sc), vec![d, d]),     // W_q
        (randn(rng, d * d, sc), vec![d, d]),     // W_k
        (randn(rng, d * d, sc), vec![d, d]),     // W_v
        input(rng, &[d]),                        // LN gain
        input(rng, &[d]),                        // LN bias
        (randn(rng, d * k, sc), vec![d, k]),     // head
        input(rng, &[k]),                        // head bias
    ];
    let sel = ClassSelection { indices: ids.clone(), forced_ground_truth: None };
    let pos = ids.iter().position(|&c| c == label).unwrap();
    Instance {
        inputs,
        library: Box::new(move |t| {
            let params = CavptParams {
                query_weight: t[2].clone(),
                query_bias: t[3].clone(),
                w_q: t[4].clone(),
                w_k: t[5].clone(),
                w_v: t[6].clone(),
                ln_gain: t[7].clone(),
                ln_bias: t[8].clone(),
                head_weight: t[9].clone(),
                head_bias: t[10].clone(),
            };
            let out = generate_cavpt(&sel, &t[0], &t[1], &params)?;
            let logits = cavpt_aux_logits(&out, &sel, label, &params, aux)?;
            Ok(cross_entropy(&logits, &[label])?.scale(alpha))
        }),
        reference: Box::new(move |x| {
            let g = m(&x[0], &[kn, de]);
            let e = m(&x[1], &[n, d]);
            let q = s::add_row(&s::matmul(&g, &m(&x[2], &[de, d])), &x[3]);
            let scores = s::matmul_t(&s::matmul(&q, &m(&x[4], &[d, d])), &s::matmul(&e, &m(&x[5], &[d, d])));
            let a = s::softmax(&s::map(&scores, |v| v / (d as f64).sqrt()), 1.0);
            let o = s::matmul(&a, &s::matmul(&e, &m(&x[6], &[d, d])));
            let o_j = s::rows(&o, &[pos]);
            let row = if combined { s::zip(&o_j, &s::rows(&q, &[pos]), |p, r| p + r) } else { o_j };
            let h = s::layer_norm(&row, &x[7], &x[8], LN_EPS as f64);
            let logits = s::add_row(&s::matmul(&h, &m(&x[9], &[d, k])), &x[10]);
            vec![alpha as f64 * s::cross_entropy(&logits, &[label])]
        }),
    }
}

const OPS: &[(&str, Builder)] = &[
    ("matmul", matmul),
    ("matmul_t", matmul_t),
    ("transpose", transpose),
    ("add", add),
    ("add_row", add_row),
    ("mul", mul),
    ("scale", scale),
    ("gelu", gelu),
    ("softmax", softmax),
    ("layer_norm", layer_norm),
    ("cross_entropy", cross_entropy_op),
    ("cosine_similarity", cosine),
    ("l2_normalize", l2_normalize),
    ("sum", sum),
    ("mean", mean),
    ("concat_rows", concat_rows_op),
    ("concat_cols", concat_cols_op),
    ("slice_rows", slice_rows),
    ("slice_cols", slice_cols),
    ("gather_rows", gather_rows),
    ("reshape", reshape),
    ("attention_block", attention_block),
    ("aux_head", aux_head),
];

/// Worst relative error per operation over `INSTANCES` random cases.
pub fn run_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = seeded(seed);
    OPS.iter()
        .map(|&(name, build)| {
            let worst = (0..INSTANCES).map(|_| grad_check(&build(&mut rng), &mut rng)).fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

