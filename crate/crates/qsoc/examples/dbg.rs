use qsoc::conic::{solver, SolverSettings};
use qsoc::model::ControlProblem;
use qsoc::sos;

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

fn main() {
    let problem = ControlProblem::from_json(QUBIT_JSON).unwrap();
    let degree: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(2);
    let program = sos::build_finite_horizon(&problem, degree).unwrap();
    let instance = sos::compile(program).unwrap();
    println!(
        "rows {}  free {}  blocks {:?}",
        instance.problem.n_rows(),
        instance.problem.layout.n_free,
        instance.problem.layout.blocks
    );
    let settings = SolverSettings {
        verbose: std::env::args().nth(2).is_some(),
        ..Default::default()
    };
    let sol = solver::solve(&instance.problem, &settings).unwrap();
    println!(
        "status {:?} obj {} iters {}",
        sol.status, sol.objective, sol.iterations
    );
    println!(
        "pinf {:.3e} dinf {:.3e} gap {:.3e} dobj {}",
        sol.primal_infeas, sol.dual_infeas, sol.rel_gap, sol.dual_objective
    );
    let report = sos::verify_certificate(&instance, &sol).unwrap();
    println!(
        "certificate ok {} residual {:.3e} (tol {:.3e}) min_eig {:.3e}",
        report.ok, report.residual, report.residual_tol, report.min_gram_eigenvalue
    );
    println!(
        "fidelity bound {}",
        sos::fidelity_bound(&problem, sol.objective)
    );
}
