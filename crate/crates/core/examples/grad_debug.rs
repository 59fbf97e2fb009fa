use metasurrogate_core::diffmath::mlp::{mlp_forward, mlp_init, Activation};
use metasurrogate_core::diffmath::{gradient, Tape};
use metasurrogate_core::rng::{rng_from_seed, RngExt as _};

fn main() {
    let trial: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(21);
    let mut rng = rng_from_seed(1000 + trial);
    let depth = rng.random_range(1..=3usize);
    let mut sizes = vec![rng.random_range(1..=4usize)];
    for _ in 0..depth { sizes.push(rng.random_range(2..=8usize)); }
    sizes.push(2);
    let activation = if rng.random_range(0..2) == 0 { Activation::Relu } else { Activation::Tanh };
    let n_pts = rng.random_range(1..=5usize);
    eprintln!("sizes {:?} act {:?} n_pts {}", sizes, activation, n_pts);
    let mut params = mlp_init("f", &sizes, activation, &mut rng).unwrap();
    // jitter biases away from zero so relu pre-activations avoid exact kinks
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        if name.contains(".b") {
            for v in params.get_mut(&name).unwrap().data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    let xs: Vec<f64> = (0..n_pts * sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = (0..n_pts).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise: Vec<f64> = (0..n_pts).map(|_| rng.random_range(-1.0..1.0)).collect();

    let build = |tape: &mut Tape, vars: &std::collections::BTreeMap<String, metasurrogate_core::diffmath::Var>| {
        let x = tape.constant(n_pts, sizes[0], xs.clone())?;
        let out = mlp_forward(tape, vars, "f", &sizes, activation, x)?;
        let mean = tape.slice_cols(out, 0, 1)?;
        let raw = tape.slice_cols(out, 1, 1)?;
        let sp = tape.softplus(raw);
        let std = tape.add_scalar(sp, 0.05);
        let eps = tape.constant(n_pts, 1, noise.clone())?;
        let jitter = tape.mul_elem(std, eps)?;
        let mean = tape.add(mean, jitter)?;
        let ll = tape.gauss_log_prob(mean, std, &ys)?;
        let ones = tape.constant(n_pts, 1, vec![1.0; n_pts])?;
        let zeros = tape.constant(n_pts, 1, vec![0.0; n_pts])?;
        let kl = tape.gauss_kl(mean, std, zeros, ones)?;
        let h = tape.gauss_entropy(std);
        let nll = tape.scale(ll, -1.0);
        let a = tape.add(nll, kl)?;
        let hs = tape.scale(h, 0.1);
        tape.add(a, hs)
    };
    let (loss, grads) = gradient(&params, |t, v| build(t, v)).unwrap();
    eprintln!("loss {loss}");
    let h = 1e-5;
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
                let h2 = h / 10.0;
                let fd2 = (eval(h2) - eval(-h2)) / (2.0 * h2);
                eprintln!("MISMATCH {name}[{i}]: ad {a} fd(h) {fd} fd(h/10) {fd2}");
            }
        }
    }
    eprintln!("done");
}
