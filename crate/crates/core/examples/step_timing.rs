//! Times one forward/backward pass of the default model on a 128×24 clip.

use std::time::Instant;

use sedx::model::{HeadKind, ModelConfig, SedModel};
use sedx::tensor::{DenseArray, Graph};

fn main() -> sedx::Result<()> {
    let model = SedModel::new(ModelConfig::new(24, 4, HeadKind::Projectors), 0)?;
    let x = DenseArray::new(
        vec![128, 24],
        (0..128 * 24).map(|i| ((i * 7919) % 97) as f64 / 50.0).collect(),
    )?;
    let reps = 50;
    let start = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new();
        let p = model.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let f = model.forward(&mut g, &p, xv)?;
        let loss = g.mean(f.probs)?;
        g.backward(loss)?;
    }
    let train = start.elapsed() / reps;
    let start = Instant::now();
    for _ in 0..reps {
        model.predict(&x)?;
    }
    let infer = start.elapsed() / reps;
    println!("forward+backward {train:?}  inference {infer:?}");
    Ok(())
}
