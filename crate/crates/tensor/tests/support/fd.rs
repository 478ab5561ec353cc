//! Central finite-difference oracle for tape gradients.

use duplex_tensor::{Graph, ParamStore, Tensor, Var};

pub const STEP: f64 = 1e-5;

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the analytic gradient of a
/// scalar function of `inputs` and its central finite-difference estimate,
/// maximized over inputs.
pub fn max_relative_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars);
    let analytic = g.backward_leaves(loss, &vars).expect("scalar loss");

    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::inference(&store);
        let vs: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let l = f(&mut g, &vs);
        g.value(l).item()
    };

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        let mut xs = inputs.to_vec();
        for i in 0..input.len() {
            let x0 = input.data()[i];
            xs[k].data_mut()[i] = x0 + STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] = x0 - STEP;
            let down = eval(&xs);
            xs[k].data_mut()[i] = x0;
            numeric[i] = (up - down) / (2.0 * STEP);
        }
        let a = analytic[k].data();
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let rel = if denom < 1e-12 { diff } else { diff / denom };
        worst = worst.max(rel);
    }
    worst
}

/// Reduces any tensor to a scalar through a fixed pseudo-random weighting so
/// every output element contributes a distinct amount.
pub fn weighted_sum(g: &mut Graph, x: Var) -> Var {
    let t = g.value(x);
    let w: Vec<f64> = (0..t.len()).map(|i| ((i as f64 + 1.0) * 0.618_033_988_75).fract() - 0.5).collect();
    let wt = Tensor::new(t.shape().to_vec(), w).unwrap();
    let wv = g.constant(wt);
    let p = g.mul(x, wv);
    g.sum(p)
}
