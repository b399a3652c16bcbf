// Scratch diagnostic: how far is the update term from -lambda * w at a
// checkpoint, and what do the top Hessian eigenvalues look like?
use ufmlab::experiment::Checkpoint;
use ufmlab::model::forward;
use ufmlab::numerics::flatten;
use ufmlab::training::gradient_update_term;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ckpt = Checkpoint::load(std::path::Path::new(&args[0])).unwrap();
    let l: usize = args[1].parse().unwrap();
    let cache = forward(&ckpt.state, &ckpt.hyper);
    let g = gradient_update_term(&cache, l);
    let w = flatten(ckpt.state.weight(l));
    let lam = ckpt.hyper.lambda_w[l - 1];
    let mut resid = g.clone();
    resid.axpy(lam, &w);
    println!(
        "epoch {}: |g|={:.3e} |lam w|={:.3e} |g + lam w|/|lam w| = {:.3e}",
        ckpt.epoch,
        g.frobenius_norm(),
        lam * w.frobenius_norm(),
        resid.frobenius_norm() / (lam * w.frobenius_norm())
    );
    let spec = ufmlab::analysis::hessian_spectrum(
        &cache,
        l,
        ufmlab::analysis::OutlierRule::default(),
        0,
    )
    .unwrap();
    println!("top 12 hessian eigenvalues: {:?}", &spec.values[..12]);
    let emp = ufmlab::analysis::gradient_alignment_empirical(&cache, l).unwrap();
    let mut coeffs = emp.coefficients.clone();
    coeffs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    println!(
        "top 12 coefficients: {:?} residual={:.3e}",
        &coeffs[..12.min(coeffs.len())],
        emp.residual_mass
    );
}
