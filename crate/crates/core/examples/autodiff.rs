//! The tensor engine on its own: a two-layer classifier trained with SGD on
//! XOR-like points, plus a finite-difference spot check of one gradient.

use dmpt::rng::seeded;
use dmpt::tensor::optim::{sgd_step, OptimizerState};
use dmpt::tensor::{backward, cross_entropy};
use dmpt::Tensor;

fn forward(x: &Tensor, w1: &Tensor, b1: &Tensor, w2: &Tensor) -> dmpt::Result<Tensor> {
    x.matmul(w1)?.add_row(b1)?.gelu().matmul(w2)
}

fn main() -> dmpt::Result<()> {
    let points = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let labels = [0, 1, 1, 0];
    let x = Tensor::new(points.iter().flatten().map(|v| v * 2.0 - 1.0).collect(), &[4, 2])?;

    let mut rng = seeded(3);
    let w1 = Tensor::randn(&[2, 8], 1.0, &mut rng)?.to_parameter();
    let b1 = Tensor::zeros(&[8])?.to_parameter();
    let w2 = Tensor::randn(&[8, 2], 0.5, &mut rng)?.to_parameter();
    let params = [w1.clone(), b1.clone(), w2.clone()];

    let steps = 400;
    let mut opt = OptimizerState::cosine(0.5, steps)?;
    for step in 0..steps {
        let loss = cross_entropy(&forward(&x, &w1, &b1, &w2)?, &labels)?;
        backward(&loss)?;
        if step % 100 == 0 {
            println!("step {step:3} loss {:.4}", loss.item());
        }
        sgd_step(&params, &mut opt)?;
    }
    let logits = forward(&x, &w1, &b1, &w2)?.to_vec();
    for (i, row) in logits.chunks(2).enumerate() {
        println!("{:?} -> class {}", points[i], usize::from(row[1] > row[0]));
    }

    // analytic vs central difference for one weight
    let loss_at = |v: f32| -> dmpt::Result<f32> {
        let mut data = w2.to_vec();
        data[0] = v;
        let w = Tensor::new(data, &[8, 2])?;
        Ok(cross_entropy(&forward(&x, &w1, &b1, &w)?, &labels)?.item())
    };
    backward(&cross_entropy(&forward(&x, &w1, &b1, &w2)?, &labels)?)?;
    let analytic = w2.grad().expect("grad")[0];
    let (v, h) = (w2.to_vec()[0], 1e-2);
    let numeric = (loss_at(v + h)? - loss_at(v - h)?) / (2.0 * h);
    println!("dL/dw2[0]: analytic {analytic:.6}, numeric {numeric:.6}");
    Ok(())
}
