use nalgebra::DVector;
use quartic_dual::pr_solver::{
    default_init_qp, gamma_qp, h_qp, newton_direction_qp, potential_qp,
    potential_split_derivative_qp, QpState, SolverConfig,
};
use quartic_dual::symlin::{self, SymMatrix};
use quartic_dual::{QpInstance, QuadraticForm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn form(n: usize, rng: &mut ChaCha8Rng) -> QuadraticForm {
    let len = n * (n + 1) / 2;
    let a = SymMatrix::from_packed(
        n,
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
    QuadraticForm::new(a, b, rng.gen_range(-1.0..1.0)).unwrap()
}

fn spd_form(n: usize, rng: &mut ChaCha8Rng) -> QuadraticForm {
    let m = form(n, rng).a.to_dense();
    let a = SymMatrix::from_dense(&(&m * &m)).shift_diagonal(0.5);
    let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
    QuadraticForm::new(a, b, rng.gen_range(-1.0..1.0)).unwrap()
}

fn seeded_instance(n: usize, rng: &mut ChaCha8Rng) -> QpInstance {
    let q0 = form(n, rng);
    let q1 = spd_form(n, rng);
    let lam0 = symlin::min_eigenvalue(&q0.a).unwrap();
    let lam1 = symlin::min_eigenvalue(&q1.a).unwrap();
    let witness = (lam0.min(0.0).abs() + 0.1) / lam1;
    QpInstance::new(q0, q1, Some(witness)).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let _ = seeded_instance(2, &mut rng);
    let _ = seeded_instance(2, &mut rng);
    let inst = seeded_instance(2, &mut rng); // the jamming n=2 k=2 instance
    // Where is the true optimum? crude grid on x with sigma = 2 q1(x).
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=600 {
        for j in 0..=600 {
            let x = DVector::from_row_slice(&[-3.0 + 0.01 * i as f64, -3.0 + 0.01 * j as f64]);
            let f = inst.q0.eval(&x) + inst.q1.eval(&x).powi(2);
            if f < best.0 {
                best = (f, x[0], x[1]);
            }
        }
    }
    let xs = DVector::from_row_slice(&[best.1, best.2]);
    let sig_star = 2.0 * inst.q1.eval(&xs);
    println!(
        "grid optimum f={:.6} x=({:.3},{:.3}) sigma*={:.4} pencil_min(sigma*)={:.4e}",
        best.0, best.1, best.2, sig_star,
        symlin::min_eigenvalue(&inst.pencil(sig_star)).unwrap()
    );
    println!(
        "witness={:?} init sigma={:.4}",
        inst.witness_alpha,
        default_init_qp(&inst).unwrap().sigma
    );

    let config = SolverConfig::default();
    let rho = SolverConfig::default_rho_qp(2);
    let mut state = default_init_qp(&inst).unwrap();
    let mut window: Vec<f64> = Vec::new();
    for iter in 0..20 {
        let gnorm = gamma_qp(&inst, &state.x, state.sigma).unwrap().norm();
        if gnorm <= config.epsilon {
            println!("CONVERGED at iter {iter}");
            break;
        }
        let p = potential_qp(&inst, &state, rho).unwrap();
        window.push(p);
        if window.len() > 5 {
            window.remove(0);
        }
        let p_max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dir = newton_direction_qp(&inst, &state, config.beta).unwrap();
        let (gp, gd) = potential_split_derivative_qp(&inst, &state, &dir, rho).unwrap();
        let eig_w = symlin::eig_sym(&state.w).unwrap().values;
        let eig_u = symlin::eig_sym(&state.u).unwrap().values;
        let pencil_min = symlin::min_eigenvalue(&inst.pencil(state.sigma)).unwrap();
        println!(
            "it {iter:2} x ({:7.3},{:7.3}) sig {:7.3} |G| {gnorm:9.2e} |H| {:9.2e} p {p:10.3e} pmax {p_max:10.3e} gp {gp:9.2e} gd {gd:9.2e} penmin {pencil_min:9.2e} eigW [{:8.2e},{:8.2e}] eigU [{:8.2e},{:8.2e}]",
            state.x[0], state.x[1], state.sigma,
            h_qp(&inst, &state).unwrap().norm(),
            eig_w[0], eig_w[1], eig_u[0], eig_u[1],
        );
        println!(
            "      dir |dx| {:8.2e} dsig {:9.2e} |dU| {:8.2e} |dW| {:8.2e}",
            dir.dx.norm(), dir.dsigma, dir.du.frobenius_norm(), dir.dw.frobenius_norm()
        );
        let admissible = |t: f64| {
            symlin::chol_pd_check_dense(&state.w.add_scaled(t, &dir.dw).to_dense())
                && symlin::chol_pd_check_dense(&state.u.add_scaled(t, &dir.du).to_dense())
        };
        let mut cap = 1.0f64;
        while cap > 1e-12 && !admissible(cap) {
            cap *= 0.5;
        }
        if cap < 1.0 {
            let (mut lo, mut hi) = (cap, cap * 2.0);
            for _ in 0..12 {
                let mid = 0.5 * (lo + hi);
                if admissible(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            cap = lo;
        }
        cap *= config.tau_boundary;
        let mut ap = if gp < 0.0 { 1.0 } else { cap };
        let mut ad = cap;
        let mut taken = false;
        while ap.max(ad) >= 1e-12 {
            let trial = QpState {
                x: &state.x + ap * &dir.dx,
                sigma: state.sigma + ad * dir.dsigma,
                u: state.u.add_scaled(ad, &dir.du),
                w: state.w.add_scaled(ad, &dir.dw),
            };
            match potential_qp(&inst, &trial, rho) {
                Ok(pt) if pt <= p_max + config.eta * (ap * gp + ad * gd) => {
                    println!("      cap {cap:9.2e} accepted ap {ap:9.2e} ad {ad:9.2e} pt {pt:10.3e}");
                    state = trial;
                    taken = true;
                    break;
                }
                _ => {}
            }
            ap *= 0.5;
            ad *= 0.5;
        }
        if !taken {
            println!("      stall at cap {cap:9.2e}");
            break;
        }
    }
}
