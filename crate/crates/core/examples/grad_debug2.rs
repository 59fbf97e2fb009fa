use metasurrogate_core::diffmath::mlp::{mlp_forward, mlp_init, Activation};
use metasurrogate_core::diffmath::{gradient, Tape, Var};
use metasurrogate_core::rng::{rng_from_seed, RngExt as _};
use std::collections::BTreeMap;

fn main() {
    let mode: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = rng_from_seed(1021);
    let sizes = vec![2usize, 4, 2];
    let n_pts = 3usize;
    let params = mlp_init("f", &sizes, Activation::Tanh, &mut rng).unwrap();
    let xs: Vec<f64> = (0..n_pts * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = (0..n_pts).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise: Vec<f64> = (0..n_pts).map(|_| rng.random_range(-1.0..1.0)).collect();

    let build = |tape: &mut Tape, vars: &BTreeMap<String, Var>| {
        let x = tape.constant(n_pts, 2, xs.clone())?;
        let out = mlp_forward(tape, vars, "f", &sizes, Activation::Tanh, x)?;
        let mean0 = tape.slice_cols(out, 0, 1)?;
        let raw = tape.slice_cols(out, 1, 1)?;
        let sp = tape.softplus(raw);
        let std = tape.add_scalar(sp, 0.05);
        let eps = tape.constant(n_pts, 1, noise.clone())?;
        let jitter = tape.mul_elem(std, eps)?;
        let mean = tape.add(mean0, jitter)?;
        let ll = tape.gauss_log_prob(mean, std, &ys)?;
        let ones = tape.constant(n_pts, 1, vec![1.0; n_pts])?;
        let zeros = tape.constant(n_pts, 1, vec![0.0; n_pts])?;
        let kl = tape.gauss_kl(mean, std, zeros, ones)?;
        let h = tape.gauss_entropy(std);
        match mode {
            1 => Ok(ll),
            2 => Ok(kl),
            3 => Ok(h),
            4 => tape.sum_all(mean).pipe_ok(),
            _ => {
                let nll = tape.scale(ll, -1.0);
                let a = tape.add(nll, kl)?;
                let hs = tape.scale(h, 0.1);
                tape.add(a, hs)
            }
        }
    };
    let (_, grads) = gradient(&params, |t, v| build(t, v)).unwrap();
    let h = 1e-5;
    let mut bad = 0;
    for (name, g) in grads.iter() {
        for i in 0..g.len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.get_mut(name).unwrap().data_mut()[i] += delta;
                let mut tape = Tape::new();
                let vars = tape.register_params(&p);
                let l = build(&mut tape, &vars).unwrap();
                tape.scalar_value(l).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = g.data()[i];
            if (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2) > 1e-5 {
                eprintln!("mode {mode} MISMATCH {name}[{i}]: ad {a} fd {fd}");
                bad += 1;
            }
        }
    }
    eprintln!("mode {mode}: {bad} mismatches");
}

trait PipeOk { fn pipe_ok(self) -> metasurrogate_core::Result<Var>; }
impl PipeOk for Var { fn pipe_ok(self) -> metasurrogate_core::Result<Var> { Ok(self) } }
