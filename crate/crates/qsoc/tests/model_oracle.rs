//! Cross-checks the symbolic chart dynamics against an independent numeric
//! implementation of the filtering equation in matrix space, plus chart and
//! schema round-trips and the jump-affineness validator.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qsoc::model::{
    symbolic_dynamics, validate_model, ChannelKind, ControlProblem, ControlSet, CostSpec,
    HermitianOp, Horizon, InitialDistribution, MeasurementChannel, ModelVars, QuantumModel,
    StateChart,
};
use qsoc::Poly;

// ---------------------------------------------------------------------------
// Independent matrix-space oracle (deliberately separate implementation).
// ---------------------------------------------------------------------------

fn mmul(n: usize, a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn madd(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn msub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn mscale(a: &[C64], s: C64) -> Vec<C64> {
    a.iter().map(|x| x * s).collect()
}

fn madj(n: usize, a: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j].conj();
        }
    }
    out
}

fn mtrace(n: usize, a: &[C64]) -> C64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

/// Chart read-off of a Hermitian matrix, independent of the library's code:
/// first n−1 diagonals, then Re/Im of upper off-diagonals row-major.
fn oracle_readoff(n: usize, m: &[C64]) -> Vec<f64> {
    let mut x = Vec::new();
    for i in 0..n - 1 {
        x.push(m[i * n + i].re);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            x.push(m[i * n + j].re);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            x.push(m[i * n + j].im);
        }
    }
    x
}

struct OracleModel {
    n: usize,
    h0: Vec<C64>,
    controls: Vec<Vec<C64>>,
    channels: Vec<(Vec<C64>, ChannelKind)>,
}

impl OracleModel {
    /// Drift of the effective (jump-compensated) filtering equation:
    /// −i[H(u),ρ] + Σ_all (σρσ* − ½{σ*σ,ρ}) − Σ_PC (σρσ* − tr(σρσ*)ρ).
    fn drift(&self, rho: &[C64], u: &[f64]) -> Vec<C64> {
        let n = self.n;
        let mut h = self.h0.clone();
        for (k, hk) in self.controls.iter().enumerate() {
            h = madd(&h, &mscale(hk, C64::new(u[k], 0.0)));
        }
        let comm = msub(&mmul(n, &h, rho), &mmul(n, rho, &h));
        let mut out = mscale(&comm, C64::new(0.0, -1.0));
        for (sigma, kind) in &self.channels {
            let sadj = madj(n, sigma);
            let srs = mmul(n, &mmul(n, sigma, rho), &sadj);
            let ss = mmul(n, &sadj, sigma);
            let anti = madd(&mmul(n, &ss, rho), &mmul(n, rho, &ss));
            out = madd(&out, &msub(&srs, &mscale(&anti, C64::new(0.5, 0.0))));
            if *kind == ChannelKind::PhotonCounting {
                let lambda = mtrace(n, &srs);
                out = msub(&out, &msub(&srs, &mscale(rho, lambda)));
            }
        }
        out
    }

    /// Homodyne innovation field: σρ + ρσ* − tr(σρ + ρσ*)ρ.
    fn innovation(&self, channel: usize, rho: &[C64]) -> Vec<C64> {
        let n = self.n;
        let (sigma, _) = &self.channels[channel];
        let sum = madd(&mmul(n, sigma, rho), &mmul(n, rho, &madj(n, sigma)));
        msub(&sum, &mscale(rho, mtrace(n, &sum)))
    }

    fn jump_rate(&self, channel: usize, rho: &[C64]) -> f64 {
        let n = self.n;
        let (sigma, _) = &self.channels[channel];
        mtrace(n, &mmul(n, &mmul(n, sigma, rho), &madj(n, sigma))).re
    }

    fn post_jump(&self, channel: usize, rho: &[C64]) -> Vec<C64> {
        let n = self.n;
        let (sigma, _) = &self.channels[channel];
        let srs = mmul(n, &mmul(n, sigma, rho), &madj(n, sigma));
        let lambda = mtrace(n, &srs);
        mscale(&srs, C64::new(1.0, 0.0) / lambda)
    }
}

// ---------------------------------------------------------------------------
// Random generators.
// ---------------------------------------------------------------------------

fn rand_c64(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn rand_matrix(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n * n).map(|_| rand_c64(rng)).collect()
}

fn rand_hermitian(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let a = rand_matrix(rng, n);
    let adj = madj(n, &a);
    madd(&a, &adj).iter().map(|c| c * 0.5).collect()
}

/// Random density matrix ρ = AA†/tr(AA†).
fn rand_state(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let a = rand_matrix(rng, n);
    let aa = mmul(n, &a, &madj(n, &a));
    let tr = mtrace(n, &aa);
    mscale(&aa, C64::new(1.0, 0.0) / tr)
}

fn rand_pure(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let psi: Vec<C64> = (0..n).map(|_| rand_c64(rng)).collect();
    let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut rho = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            rho[i * n + j] = psi[i] * psi[j].conj() / (norm * norm);
        }
    }
    rho
}

/// Rank-1 σ = a b† (always has an affine jump map).
fn rand_rank_one(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let a: Vec<C64> = (0..n).map(|_| rand_c64(rng)).collect();
    let b: Vec<C64> = (0..n).map(|_| rand_c64(rng)).collect();
    let mut m = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = a[i] * b[j].conj();
        }
    }
    m
}

/// Householder reflection: unitary, so λ is constant (affine jump map).
fn rand_householder(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..n).map(|_| rand_c64(rng)).collect();
    let nsq: f64 = v.iter().map(|c| c.norm_sqr()).sum();
    let mut m = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            };
            m[i * n + j] = delta - v[i] * v[j].conj() * (2.0 / nsq);
        }
    }
    m
}

fn build_model(
    n: usize,
    h0: Vec<C64>,
    controls: Vec<Vec<C64>>,
    channels: Vec<(Vec<C64>, ChannelKind)>,
) -> (QuantumModel, OracleModel) {
    let oracle = OracleModel {
        n,
        h0: h0.clone(),
        controls: controls.clone(),
        channels: channels.clone(),
    };
    let k = controls.len();
    let model = QuantumModel {
        dim: n,
        h0: HermitianOp::new(n, h0).unwrap(),
        controls: controls
            .into_iter()
            .map(|m| HermitianOp::new(n, m).unwrap())
            .collect(),
        channels: channels
            .into_iter()
            .map(|(m, kind)| MeasurementChannel::new(n, m, kind).unwrap())
            .collect(),
        control_set: ControlSet::Box {
            lo: vec![-1.0; k],
            hi: vec![1.0; k],
        },
    };
    (model, oracle)
}

fn assert_close(label: &str, got: f64, want: f64) {
    let tol = 1e-9 * (1.0 + want.abs());
    assert!(
        (got - want).abs() <= tol,
        "{label}: symbolic {got} vs oracle {want} (diff {:.3e})",
        (got - want).abs()
    );
}

// ---------------------------------------------------------------------------
// Chart layout and purity.
// ---------------------------------------------------------------------------

#[test]
fn chart_of_reference_states() {
    let chart = StateChart::new(2);
    // Basis vector e1 is the excited level: its population is coordinate x1.
    let ground = vec![
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(1.0, 0.0),
    ];
    assert_eq!(chart.matrix_to_chart(&ground).unwrap(), vec![0.0, 0.0, 0.0]);
    let excited = vec![
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
    ];
    assert_eq!(
        chart.matrix_to_chart(&excited).unwrap(),
        vec![1.0, 0.0, 0.0]
    );
    let plus = vec![
        C64::new(0.5, 0.0),
        C64::new(0.5, 0.0),
        C64::new(0.5, 0.0),
        C64::new(0.5, 0.0),
    ];
    assert_eq!(chart.matrix_to_chart(&plus).unwrap(), vec![0.5, 0.5, 0.0]);
}

#[test]
fn chart_round_trip_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &n in &[2usize, 3, 4] {
        let chart = StateChart::new(n);
        for _ in 0..50 {
            let rho = rand_state(&mut rng, n);
            let x = chart.matrix_to_chart(&rho).unwrap();
            assert_eq!(x.len(), n * n - 1);
            let back = chart.chart_to_matrix(&x);
            for (a, b) in rho.iter().zip(back.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn chart_rejects_bad_input() {
    let chart = StateChart::new(2);
    // Trace 2.
    let m = vec![
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(1.0, 0.0),
    ];
    assert!(chart.matrix_to_chart(&m).is_err());
    // Non-Hermitian beyond tolerance.
    let m = vec![
        C64::new(0.5, 0.0),
        C64::new(0.3, 0.0),
        C64::new(0.1, 0.0),
        C64::new(0.5, 0.0),
    ];
    assert!(chart.matrix_to_chart(&m).is_err());
}

#[test]
fn qubit_purity_formula() {
    // tr ρ² = (1−x1)² + x1² + 2(x2² + x3²) on the qubit chart.
    let chart = StateChart::new(2);
    let vars = ModelVars::new(3, 0);
    let p = chart.purity_polynomial(&vars);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let x1: f64 = rng.gen_range(-1.0..2.0);
        let x2: f64 = rng.gen_range(-1.0..1.0);
        let x3: f64 = rng.gen_range(-1.0..1.0);
        let expected = (1.0 - x1).powi(2) + x1 * x1 + 2.0 * (x2 * x2 + x3 * x3);
        let got = p.eval_f64(&[0.0, x1, x2, x3]).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }
    assert_eq!(p.degree(), 2);
}

#[test]
fn purity_polynomial_matches_matrix_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for &n in &[2usize, 3] {
        let chart = StateChart::new(n);
        let vars = ModelVars::new(n * n - 1, 0);
        let p = chart.purity_polynomial(&vars);
        for _ in 0..50 {
            let rho = rand_state(&mut rng, n);
            let x = chart.matrix_to_chart(&rho).unwrap();
            let tr2 = mtrace(n, &mmul(n, &rho, &rho)).re;
            let mut point = vec![0.0];
            point.extend_from_slice(&x);
            assert_close("purity", p.eval_f64(&point).unwrap(), tr2);
            assert_close("purity_value", chart.purity_value(&x), tr2);
        }
    }
}

#[test]
fn pure_states_have_unit_purity() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for &n in &[2usize, 3] {
        let chart = StateChart::new(n);
        for _ in 0..50 {
            let x = chart.random_pure_chart(&mut rng);
            assert!((chart.purity_value(&x) - 1.0).abs() < 1e-12);
        }
    }
}

// ---------------------------------------------------------------------------
// Symbolic dynamics vs numeric oracle.
// ---------------------------------------------------------------------------

fn check_dynamics_against_oracle(
    model: &QuantumModel,
    oracle: &OracleModel,
    rng: &mut ChaCha8Rng,
    trials: usize,
) {
    let chart = StateChart::new(model.dim);
    let vars = ModelVars::new(model.n_chart(), model.n_controls());
    let dyn_ = symbolic_dynamics(model, &chart, &vars).unwrap();

    let mut hd = Vec::new();
    let mut pc = Vec::new();
    for (l, c) in model.channels.iter().enumerate() {
        match c.kind {
            ChannelKind::Homodyne => hd.push(l),
            ChannelKind::PhotonCounting => pc.push(l),
        }
    }
    assert_eq!(dyn_.diffusion.len(), hd.len());
    assert_eq!(dyn_.rates.len(), pc.len());
    assert_eq!(dyn_.jumps.len(), pc.len());

    for _ in 0..trials {
        let rho = if rng.gen_bool(0.5) {
            rand_state(rng, model.dim)
        } else {
            rand_pure(rng, model.dim)
        };
        let x = chart.matrix_to_chart(&rho).unwrap();
        let u: Vec<f64> = (0..model.n_controls())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let point = vars.point(rng.gen_range(0.0..5.0), &x, &u);

        let want_drift = oracle_readoff(model.dim, &oracle.drift(&rho, &u));
        for (k, p) in dyn_.drift.iter().enumerate() {
            assert_close("drift", p.eval_f64(&point).unwrap(), want_drift[k]);
        }

        for (gi, &l) in hd.iter().enumerate() {
            let want = oracle_readoff(model.dim, &oracle.innovation(l, &rho));
            for (k, p) in dyn_.diffusion[gi].iter().enumerate() {
                assert_close("diffusion", p.eval_f64(&point).unwrap(), want[k]);
            }
        }

        for (ji, &l) in pc.iter().enumerate() {
            let lambda = oracle.jump_rate(l, &rho);
            assert_close("rate", dyn_.rates[ji].eval_f64(&point).unwrap(), lambda);
            if lambda > 1e-6 {
                let want = oracle_readoff(model.dim, &oracle.post_jump(l, &rho));
                for (k, p) in dyn_.jumps[ji].iter().enumerate() {
                    let got = p.eval_f64(&point).unwrap();
                    let tol = 1e-9 * (1.0 + want[k].abs()) / lambda.min(1.0);
                    assert!(
                        (got - want[k]).abs() <= tol,
                        "jump component {k}: {got} vs {}",
                        want[k]
                    );
                }
            }
        }
    }
}

#[test]
fn qubit_homodyne_dynamics_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    // Detuned Rabi qubit with a decay channel measured by homodyne detection.
    let h0 = vec![
        C64::new(2.5, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(-2.5, 0.0),
    ];
    let hx = vec![
        C64::new(0.0, 0.0),
        C64::new(2.5, 0.0),
        C64::new(2.5, 0.0),
        C64::new(0.0, 0.0),
    ];
    let lower = vec![
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
    ];
    let (model, oracle) = build_model(2, h0, vec![hx], vec![(lower, ChannelKind::Homodyne)]);
    check_dynamics_against_oracle(&model, &oracle, &mut rng, 60);
}

#[test]
fn qubit_counting_dynamics_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let h0 = vec![
        C64::new(2.5, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(-2.5, 0.0),
    ];
    let hx = vec![
        C64::new(0.0, 0.0),
        C64::new(2.5, 0.0),
        C64::new(2.5, 0.0),
        C64::new(0.0, 0.0),
    ];
    let lower = vec![
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
    ];
    let (model, oracle) = build_model(2, h0, vec![hx], vec![(lower, ChannelKind::PhotonCounting)]);
    check_dynamics_against_oracle(&model, &oracle, &mut rng, 60);
}

#[test]
fn random_models_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for &n in &[2usize, 3] {
        for rep in 0..4 {
            let h0 = rand_hermitian(&mut rng, n);
            let n_controls = rep % 3;
            let controls: Vec<Vec<C64>> = (0..n_controls)
                .map(|_| rand_hermitian(&mut rng, n))
                .collect();
            // HD channels can carry any operator; PC channels use rank-1 or
            // unitary operators so the jump map stays affine.
            let mut channels = vec![(rand_matrix(&mut rng, n), ChannelKind::Homodyne)];
            if rep % 2 == 0 {
                channels.push((rand_rank_one(&mut rng, n), ChannelKind::PhotonCounting));
            } else {
                channels.push((rand_householder(&mut rng, n), ChannelKind::PhotonCounting));
            }
            let (model, oracle) = build_model(n, h0, controls, channels);
            check_dynamics_against_oracle(&model, &oracle, &mut rng, 12);
        }
    }
}

#[test]
fn post_jump_state_of_pure_state_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let chart = StateChart::new(2);
    let vars = ModelVars::new(3, 0);
    let sigma = rand_rank_one(&mut rng, 2);
    let (model, _) = build_model(
        2,
        vec![C64::new(0.0, 0.0); 4],
        vec![],
        vec![(sigma, ChannelKind::PhotonCounting)],
    );
    let dyn_ = symbolic_dynamics(&model, &chart, &vars).unwrap();
    for _ in 0..30 {
        let x = chart.random_pure_chart(&mut rng);
        let point = vars.point(0.0, &x, &[]);
        if dyn_.rates[0].eval_f64(&point).unwrap() < 1e-6 {
            continue;
        }
        let hx: Vec<f64> = dyn_.jumps[0]
            .iter()
            .map(|p| p.eval_f64(&point).unwrap())
            .collect();
        assert!((chart.purity_value(&hx) - 1.0).abs() < 1e-8);
    }
}

#[test]
fn drift_is_affine_in_controls() {
    let mut rng = ChaCha8Rng::seed_from_u64(113);
    let h0 = rand_hermitian(&mut rng, 2);
    let h1 = rand_hermitian(&mut rng, 2);
    let h2 = rand_hermitian(&mut rng, 2);
    let (model, _) = build_model(
        2,
        h0,
        vec![h1, h2],
        vec![(rand_matrix(&mut rng, 2), ChannelKind::Homodyne)],
    );
    let chart = StateChart::new(2);
    let vars = ModelVars::new(3, 2);
    let dyn_ = symbolic_dynamics(&model, &chart, &vars).unwrap();
    for p in &dyn_.drift {
        for k in 0..2 {
            assert!(p.degree_in(vars.u_index(k)) <= 1);
        }
        assert_eq!(p.degree_in(vars.t_index()), 0);
    }
}

// ---------------------------------------------------------------------------
// Jump-affineness validation.
// ---------------------------------------------------------------------------

fn counting_problem(sigma: Vec<C64>) -> ControlProblem {
    let (model, _) = build_model(
        2,
        vec![
            C64::new(2.5, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(-2.5, 0.0),
        ],
        vec![],
        vec![(sigma, ChannelKind::PhotonCounting)],
    );
    let vars = ModelVars::new(3, 0);
    let stage = Poly::constant(&vars.set, 1.0)
        .sub(&Poly::var(&vars.set, vars.x_index(0)).unwrap())
        .unwrap();
    let cost = CostSpec {
        stage,
        terminal: Poly::zero(&vars.set),
        horizon: Horizon::Finite(5.0),
    };
    let initial = InitialDistribution::dirac(vec![0.0, 0.0, 0.0]);
    ControlProblem::from_parts(model, cost, initial).unwrap()
}

#[test]
fn lowering_operator_passes_validation() {
    let sigma = vec![
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
    ];
    let report = validate_model(&counting_problem(sigma));
    assert!(report.ok(), "report:\n{}", report.render());
    assert_eq!(report.jump_checks.len(), 1);
    assert!(report.jump_checks[0].pass);
    assert!(report.jump_checks[0].max_remainder < 1e-12);
}

#[test]
fn unitary_operator_passes_validation() {
    // Pauli X: unitary, so the rate is the constant 1.
    let sigma = vec![
        C64::new(0.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
    ];
    let report = validate_model(&counting_problem(sigma));
    assert!(report.ok(), "report:\n{}", report.render());
    assert!(report.jump_checks[0].pass);
}

#[test]
fn rank_one_projector_passes_validation_with_zero_remainder() {
    // σ = |e1⟩⟨e1|: σρσ* = ρ11 |e1⟩⟨e1|, so h ≡ e1 is constant and the
    // division is exact. Rank-1 operators always yield affine jump maps.
    let sigma = vec![
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
    ];
    let problem = counting_problem(sigma);
    let report = validate_model(&problem);
    assert!(report.ok(), "report:\n{}", report.render());
    assert!(report.jump_checks[0].pass);
    assert!(report.jump_checks[0].max_remainder < 1e-12);
    assert_eq!(report.jump_checks[0].quotient_degree, 0);

    // And the jump map is the constant chart point (1, 0, 0).
    let dyn_ = symbolic_dynamics(&problem.model, &problem.chart, &problem.vars).unwrap();
    let point = problem.vars.point(0.0, &[0.7, 0.2, -0.1], &[]);
    let h: Vec<f64> = dyn_.jumps[0]
        .iter()
        .map(|p| p.eval_f64(&point).unwrap())
        .collect();
    assert!((h[0] - 1.0).abs() < 1e-12 && h[1].abs() < 1e-12 && h[2].abs() < 1e-12);
}

#[test]
fn rank_two_diagonal_operator_fails_validation() {
    // σ = diag(1, 2): λ = 4 − 3x1, and dividing the numerator read-offs by it
    // leaves remainders of order one, so the jump map is not affine.
    let sigma = vec![
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(2.0, 0.0),
    ];
    let problem = counting_problem(sigma);
    let report = validate_model(&problem);
    assert!(!report.ok());
    assert!(!report.jump_checks[0].pass);
    assert!(report.jump_checks[0].max_remainder > 1.0);
    assert!(symbolic_dynamics(&problem.model, &problem.chart, &problem.vars).is_err());
}

// ---------------------------------------------------------------------------
// Control sets, cost validation, schema round-trip.
// ---------------------------------------------------------------------------

#[test]
fn box_control_set_compiles_to_degree_one_pairs() {
    let vars = ModelVars::new(3, 2);
    let cs = ControlSet::Box {
        lo: vec![-1.0, 0.0],
        hi: vec![1.0, 2.0],
    };
    let polys = cs.constraint_polys(&vars).unwrap();
    assert_eq!(polys.len(), 4);
    for p in &polys {
        assert_eq!(p.degree(), 1);
    }
    // u1 − (−1) at u1 = 0.3 is 1.3; 1 − u1 is 0.7; u2 − 0 is 1.5; 2 − u2 is 0.5.
    let point = vars.point(0.0, &[0.0; 3], &[0.3, 1.5]);
    let vals: Vec<f64> = polys.iter().map(|p| p.eval_f64(&point).unwrap()).collect();
    assert_eq!(vals, vec![1.3, 0.7, 1.5, 0.5]);
}

#[test]
fn ball_control_set_compiles_to_single_quadratic() {
    let vars = ModelVars::new(3, 2);
    let cs = ControlSet::Ball { radius: 2.0 };
    let polys = cs.constraint_polys(&vars).unwrap();
    assert_eq!(polys.len(), 1);
    assert_eq!(polys[0].degree(), 2);
    let point = vars.point(0.0, &[0.0; 3], &[1.0, 1.0]);
    assert!((polys[0].eval_f64(&point).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn control_set_clamp() {
    let cs = ControlSet::Box {
        lo: vec![-1.0],
        hi: vec![1.0],
    };
    let mut u = vec![3.0];
    cs.clamp(&mut u);
    assert_eq!(u, vec![1.0]);
    let ball = ControlSet::Ball { radius: 1.0 };
    let mut u = vec![3.0, 4.0];
    ball.clamp(&mut u);
    assert!((u[0] - 0.6).abs() < 1e-12 && (u[1] - 0.8).abs() < 1e-12);
}

#[test]
fn terminal_cost_must_not_depend_on_time_or_controls() {
    let vars = ModelVars::new(3, 1);
    let bad = CostSpec {
        stage: Poly::zero(&vars.set),
        terminal: Poly::var(&vars.set, vars.t_index()).unwrap(),
        horizon: Horizon::Finite(1.0),
    };
    assert!(bad.validate(&vars).is_err());
    let bad_u = CostSpec {
        stage: Poly::zero(&vars.set),
        terminal: Poly::var(&vars.set, vars.u_index(0)).unwrap(),
        horizon: Horizon::Finite(1.0),
    };
    assert!(bad_u.validate(&vars).is_err());
}

#[test]
fn initial_distribution_validation() {
    let chart = StateChart::new(2);
    // Pure atom passes the strict check.
    let pure = InitialDistribution::dirac(vec![0.0, 0.0, 0.0]);
    assert!(pure.validate(&chart, false).is_ok());
    // The maximally mixed state only passes in mixed mode.
    let mixed = InitialDistribution::dirac(vec![0.5, 0.0, 0.0]);
    assert!(mixed.validate(&chart, false).is_err());
    assert!(mixed.validate(&chart, true).is_ok());
    // Weights must sum to one.
    let bad = InitialDistribution {
        atoms: vec![(0.5, vec![0.0, 0.0, 0.0]), (0.4, vec![1.0, 0.0, 0.0])],
    };
    assert!(bad.validate(&chart, false).is_err());
}

const QUBIT_JSON: &str = r#"{
  "dim": 2,
  "h0": [[[2.5, 0], [0, 0]], [[0, 0], [-2.5, 0]]],
  "controls": [[[[0, 0], [2.5, 0]], [[2.5, 0], [0, 0]]]],
  "channels": [
    {"matrix": [[[0, 0], [0, 0]], [[1, 0], [0, 0]]], "kind": "homodyne"}
  ],
  "control_set": {"type": "box", "lo": [-1.0], "hi": [1.0]},
  "cost": {
    "stage_terms": [
      {"coeff": 1.0, "powers": [0, 0, 0, 0, 0]},
      {"coeff": -1.0, "powers": [0, 1, 0, 0, 0]}
    ],
    "terminal_terms": []
  },
  "horizon": {"T": 5.0},
  "initial": {
    "atoms": [
      {"weight": 1.0, "state_matrix": [[[0, 0], [0, 0]], [[0, 0], [1, 0]]]}
    ]
  }
}"#;

#[test]
fn json_model_parses_and_round_trips() {
    let problem = ControlProblem::from_json(QUBIT_JSON).unwrap();
    assert_eq!(problem.model.dim, 2);
    assert_eq!(problem.model.n_controls(), 1);
    assert_eq!(problem.vars.ambient_len(), 5);
    assert_eq!(problem.cost.horizon, Horizon::Finite(5.0));
    assert_eq!(problem.initial.atoms, vec![(1.0, vec![0.0, 0.0, 0.0])]);
    // Stage cost is 1 − x1.
    let p0 = problem.vars.point(0.0, &[0.0, 0.0, 0.0], &[0.0]);
    let p1 = problem.vars.point(0.0, &[1.0, 0.0, 0.0], &[0.0]);
    assert!((problem.cost.stage.eval_f64(&p0).unwrap() - 1.0).abs() < 1e-15);
    assert!(problem.cost.stage.eval_f64(&p1).unwrap().abs() < 1e-15);
    assert!(problem.validate().ok());

    // Dump and re-parse: identical content hash.
    let file = problem.to_model_file();
    let json = serde_json::to_string_pretty(&file).unwrap();
    let again = ControlProblem::from_json(&json).unwrap();
    assert_eq!(problem.content_hash(), again.content_hash());
}

#[test]
fn json_horizon_must_be_exclusive() {
    let both = QUBIT_JSON.replace(
        r#""horizon": {"T": 5.0}"#,
        r#""horizon": {"T": 5.0, "gamma": 0.1}"#,
    );
    assert!(ControlProblem::from_json(&both).is_err());
    let neither = QUBIT_JSON.replace(r#""horizon": {"T": 5.0}"#, r#""horizon": {}"#);
    assert!(ControlProblem::from_json(&neither).is_err());
    let discounted = QUBIT_JSON.replace(r#""horizon": {"T": 5.0}"#, r#""horizon": {"gamma": 0.5}"#);
    let problem = ControlProblem::from_json(&discounted).unwrap();
    assert_eq!(problem.cost.horizon, Horizon::Discounted(0.5));
}

#[test]
fn non_hermitian_hamiltonian_is_rejected() {
    let bad = QUBIT_JSON.replace(
        r#""h0": [[[2.5, 0], [0, 0]], [[0, 0], [-2.5, 0]]]"#,
        r#""h0": [[[2.5, 0], [1, 0]], [[0, 0], [-2.5, 0]]]"#,
    );
    assert!(ControlProblem::from_json(&bad).is_err());
}
