use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use ske::engine::{evaluate_kernel, EvaluationRequest};
use ske::models::SpectralModel;
use ske::oracles::gamma;

fn main() {
    let (rho, nu, alpha) = (0.5f64, 0.51f64, 0.1f64);
    let k0 = rho.powf(-alpha - 2.0 * nu) * gamma(0.5 * (1.0 - alpha)) * gamma(nu + 0.5 * alpha)
        / gamma(nu + 0.5);
    let model = SpectralModel::singular_matern((1.0f64 / k0).sqrt(), rho, nu, alpha).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(20260811);
    let x: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut distances: Vec<f64> = vec![0.0];
    for i in 0..1000 {
        for j in (i + 1)..1000 {
            distances.push((x[i] - x[j]).abs());
        }
    }
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distances.dedup();
    println!("unique distances: {}", distances.len());
    for eps in [1e-4, 1e-8, 1e-10] {
        let t = std::time::Instant::now();
        let req = EvaluationRequest::new(model.clone(), distances.clone(), eps)
            .with_nodes_per_panel(4096);
        let out = evaluate_kernel(&req).unwrap();
        println!(
            "eps={eps:8.0e}: {:7.2}s panels={} nodes={} nuffts={}",
            t.elapsed().as_secs_f64(),
            out.panels.len(),
            out.total_nodes,
            out.nufft_count
        );
    }
}
