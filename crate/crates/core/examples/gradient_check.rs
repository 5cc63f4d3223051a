//! Fit a small MLP to `sin(3x)·cos(2y)` with Adam, then compare its tape
//! gradients with central differences.
//!
//! `cargo run --release --example gradient_check`

use rand::Rng;

use teglo::autodiff::{
    check_gradients, exponential_lr, Activation, AdamConfig, AdamState, Matrix, Mlp, ParamStore,
    Tape,
};

fn main() -> teglo::Result<()> {
    let mut rng = teglo::rng_for(1, 0);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        &mut store,
        "mlp",
        &[2, 32, 32, 1],
        Activation::Softplus,
        Activation::None,
        false,
        &mut rng,
    )?;

    let n = 256;
    let mut xs = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        xs.extend([x, y]);
        ys.push((3.0 * x).sin() * (2.0 * y).cos());
    }
    let (x, target) = (Matrix::from_vec(n, 2, xs)?, Matrix::from_vec(n, 1, ys)?);

    let loss = |s: &ParamStore, grad: bool| -> teglo::Result<(f64, Option<Vec<Matrix>>)> {
        let mut tape = Tape::new();
        let input = tape.constant(&x);
        let out = mlp.forward(&mut tape, s, input)?;
        let t = tape.constant(&target);
        let diff = tape.sub(out, t)?;
        let sq = tape.square(diff);
        let l = tape.mean(sq);
        let g = if grad {
            Some(tape.backward(l)?.dense(s))
        } else {
            None
        };
        Ok((tape.value(l).item(), g))
    };

    let steps = 1500;
    let mut adam = AdamState::new(&store, AdamConfig::default());
    for step in 0..steps {
        let (l, g) = loss(&store, true)?;
        if step % 300 == 0 {
            println!("step {step:>5}  mse {l:.6}");
        }
        adam.step(
            &mut store,
            &g.unwrap(),
            exponential_lr(1e-2, 1e-3, step, steps),
        )?;
    }
    println!("final        mse {:.6}", loss(&store, false)?.0);

    let report = check_gradients(&store, 200, 1e-6, 1e-6, &mut rng, &|_| true, loss)?;
    println!(
        "checked {} entries, max relative error {:.2e}",
        report.checked, report.max_rel_err
    );
    Ok(())
}
